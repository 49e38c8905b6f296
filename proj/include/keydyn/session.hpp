#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace keydyn {

enum class KeyAction { Down, Up };

struct KeyEvent {
    std::string key;
    KeyAction action = KeyAction::Down;
    double t = 0.0;  // milliseconds

    bool operator==(const KeyEvent&) const = default;
};

namespace keys {
inline constexpr std::string_view kLeftShift = "LShift";
inline constexpr std::string_view kRightShift = "RShift";
inline constexpr std::string_view kCapsLock = "CapsLock";
inline constexpr std::string_view kBackspace = "Backspace";
inline constexpr std::string_view kDelete = "Delete";
inline constexpr std::string_view kEnter = "Enter";

bool is_named(std::string_view key) noexcept;
/// A single UTF-8 encoded code point that is not a control character.
bool is_printable(std::string_view key) noexcept;
}  // namespace keys

struct LoginContext {
    std::string geo;
    std::string timezone;
    std::string device_id;

    bool operator==(const LoginContext&) const = default;
};

enum class Field { Username, Password };

/// Inclusive event-index range. `last == first - 1` encodes an empty span.
struct FieldSpan {
    std::ptrdiff_t first = 0;
    std::ptrdiff_t last = -1;

    bool empty() const noexcept { return last < first; }
    std::size_t size() const noexcept { return empty() ? 0 : static_cast<std::size_t>(last - first + 1); }
    bool operator==(const FieldSpan&) const = default;
};

struct LoginSession {
    std::string username_claim;
    LoginContext context;
    FieldSpan username_span;
    FieldSpan password_span;
    std::vector<KeyEvent> events;
    std::optional<std::vector<double>> pressure;

    const FieldSpan& span(Field f) const noexcept {
        return f == Field::Username ? username_span : password_span;
    }
    std::span<const KeyEvent> field_events(Field f) const;

    bool operator==(const LoginSession&) const = default;
};

/// Decodes and validates a session document. Throws Error on malformed input,
/// unsorted timestamps, orphan key-ups or bad spans.
LoginSession parse_session(std::string_view document);
LoginSession session_from_json(const nlohmann::json& doc);
nlohmann::json session_to_json(const LoginSession& session);
void validate_session(const LoginSession& session);

/// Replays the field's events against an end-of-line cursor and returns the
/// resulting text.
std::string reconstruct_text(const LoginSession& session, Field field);

// ---------------------------------------------------------------------------
// Features

enum class Feature : std::size_t {
    TypingRate,
    SessionTime,
    MeanDwell,
    MeanFlight,
    ShiftLeftCount,
    ShiftRightCount,
    CapsLockCount,
    BackspaceCount,
    DeleteCount,
    GeoMismatch,
};

inline constexpr std::size_t kCoreFeatureCount = 10;
inline constexpr std::string_view kPressureFeatureName = "pressure_mean";

std::string_view feature_name(Feature f) noexcept;
std::vector<std::string> feature_names(bool with_pressure);

struct FeatureVector {
    std::array<double, kCoreFeatureCount> core{};
    std::optional<double> pressure;
    std::int64_t timestamp_ms = 0;  // metadata, never clustered

    double operator[](Feature f) const noexcept { return core[static_cast<std::size_t>(f)]; }
    double& operator[](Feature f) noexcept { return core[static_cast<std::size_t>(f)]; }

    /// Clustered dimensions in their fixed order; pressure is appended only
    /// when requested.
    std::vector<double> clustered(bool with_pressure) const;

    bool operator==(const FeatureVector&) const = default;
};

/// `enrolled` is the profile's enrolled context; geo_mismatch is 1 when the
/// declared geo tag differs from it. Pass std::nullopt to leave it at 0.
FeatureVector extract_features(const LoginSession& session,
                               const std::optional<LoginContext>& enrolled = std::nullopt,
                               std::int64_t timestamp_ms = 0);

struct NormalizationRanges {
    std::vector<std::pair<double, double>> bounds;  // (min, max) per dimension

    bool empty() const noexcept { return bounds.empty(); }
    std::size_t size() const noexcept { return bounds.size(); }
    bool covers(std::span<const double> raw) const noexcept;
    bool operator==(const NormalizationRanges&) const = default;
};

std::vector<double> normalize(std::span<const double> raw, const NormalizationRanges& ranges);
NormalizationRanges update_ranges(NormalizationRanges ranges, std::span<const double> raw);

}  // namespace keydyn
