#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "keydyn/auth_service.hpp"
#include "keydyn/session.hpp"

namespace keydyn {

enum class ShiftStyle { ShiftKey, CapsLock };

/// Synthetic typist: Gaussian dwell/flight truncated at 1 ms, optional typos
/// corrected with Backspace, and a habit for producing capitals.
struct TypistModel {
    double dwell_mean = 90.0;
    double dwell_std = 12.0;
    double flight_mean = 140.0;
    double flight_std = 25.0;
    double error_rate = 0.0;
    ShiftStyle shift_style = ShiftStyle::ShiftKey;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const TypistModel& m);
TypistModel typist_from_json(const nlohmann::json& j);

LoginSession simulate_session(const TypistModel& model, const std::string& username, const std::string& password,
                              std::mt19937_64& rng, const LoginContext& context = {});

// ---------------------------------------------------------------------------
// Scenario replay

enum class Truth { Legit, Imposter };
enum class ChallengeBehavior { Pass, Fail };

struct ScenarioAttempt {
    nlohmann::json session;  // session document
    Truth truth = Truth::Legit;
    ChallengeBehavior challenge_behavior = ChallengeBehavior::Pass;
};

/// Scenario file: JSON array of {"session": {...} | "session_file": path,
/// "truth": "legit"|"imposter", "challenge_behavior": "pass"|"fail"}.
/// Relative session_file paths resolve against `base_dir`.
std::vector<ScenarioAttempt> parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json scenario_to_json(const std::vector<ScenarioAttempt>& attempts);

struct AttemptLog {
    std::size_t index = 0;
    Truth truth = Truth::Legit;
    std::string username;
    bool granted = false;
    int status = 0;
    std::optional<std::string> degree;
    std::optional<bool> global_pass;
    std::optional<std::string> challenge_kind;
    std::optional<std::string> challenge_result;
    std::optional<std::string> error;
};

struct MetricsReport {
    std::size_t legit_total = 0;
    std::size_t legit_granted = 0;
    std::size_t legit_denied = 0;
    std::size_t imposter_total = 0;
    std::size_t imposter_granted = 0;
    std::size_t imposter_denied = 0;
    std::size_t challenged_otp = 0;
    std::size_t challenged_oob = 0;
    std::size_t credential_failures = 0;
    std::size_t global_failures = 0;
    std::size_t degree_normal = 0;
    std::size_t degree_first = 0;
    std::size_t degree_second = 0;

    double fpr() const noexcept;
    double fnr() const noexcept;
    double gar() const noexcept;

    static MetricsReport from_log(const std::vector<AttemptLog>& log);
    bool operator==(const MetricsReport&) const = default;
};

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const AttemptLog& a);

/// Where replayed attempts go: the library in-process or a live service.
class AuthBackend {
public:
    virtual ~AuthBackend() = default;
    virtual Response login_attempt(const nlohmann::json& session_doc) = 0;
    virtual Response verify_otp(const std::string& id, const std::string& code) = 0;
    virtual Response approve_oob(const std::string& id, const std::string& token) = 0;
    /// What the legitimate user's second device received for this challenge.
    virtual std::optional<std::string> side_channel(const std::string& challenge_id, const std::string& kind,
                                                    const std::string& username) = 0;
};

class InProcessBackend final : public AuthBackend {
public:
    InProcessBackend(ServiceConfig config, ProfileStore store, std::uint64_t seed);

    Response login_attempt(const nlohmann::json& session_doc) override;
    Response verify_otp(const std::string& id, const std::string& code) override;
    Response approve_oob(const std::string& id, const std::string& token) override;
    std::optional<std::string> side_channel(const std::string& challenge_id, const std::string& kind,
                                            const std::string& username) override;

    AuthService& service() noexcept { return *service_; }

private:
    SeededRandom rng_;
    MemoryNotifier notifier_;
    std::unique_ptr<AuthService> service_;
};

/// Talks to a running service; secrets are read back from its outbox log.
class HttpBackend final : public AuthBackend {
public:
    HttpBackend(std::string base_url, std::filesystem::path outbox);

    Response login_attempt(const nlohmann::json& session_doc) override;
    Response verify_otp(const std::string& id, const std::string& code) override;
    Response approve_oob(const std::string& id, const std::string& token) override;
    std::optional<std::string> side_channel(const std::string& challenge_id, const std::string& kind,
                                            const std::string& username) override;

private:
    Response post(const std::string& path, const nlohmann::json& body);

    std::string base_url_;
    std::filesystem::path outbox_;
};

struct ReplayResult {
    MetricsReport metrics;
    std::vector<AttemptLog> log;
};

/// Runs each attempt through the full pipeline in order. Challenged subjects
/// with challenge_behavior=pass answer from the side channel; the others
/// guess until the challenge closes.
ReplayResult replay(AuthBackend& backend, const std::vector<ScenarioAttempt>& attempts);

}  // namespace keydyn
