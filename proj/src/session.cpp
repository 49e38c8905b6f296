#include "keydyn/session.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

#include "keydyn/error.hpp"

namespace keydyn {

namespace keys {

bool is_named(std::string_view key) noexcept {
    return key == kLeftShift || key == kRightShift || key == kCapsLock || key == kBackspace ||
           key == kDelete || key == kEnter;
}

bool is_printable(std::string_view key) noexcept {
    if (key.empty()) return false;
    const auto lead = static_cast<unsigned char>(key[0]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
        len = 1;
        cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
        len = 2;
        cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
        len = 3;
        cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
        len = 4;
        cp = lead & 0x07;
    } else {
        return false;
    }
    if (key.size() != len) return false;
    for (std::size_t i = 1; i < len; ++i) {
        const auto c = static_cast<unsigned char>(key[i]);
        if ((c & 0xC0) != 0x80) return false;
        cp = (cp << 6) | (c & 0x3F);
    }
    if (cp < 0x20 || cp == 0x7F) return false;
    if (cp >= 0x80 && cp <= 0x9F) return false;
    return true;
}

}  // namespace keys

namespace {

using nlohmann::json;

[[noreturn]] void malformed(const std::string& what) {
    throw Error(ErrorCode::MalformedDocument, "malformed session document: " + what);
}

const json& require(const json& obj, const char* name) {
    auto it = obj.find(name);
    if (it == obj.end()) malformed(std::string("missing field '") + name + "'");
    return *it;
}

std::string string_field(const json& obj, const char* name, bool required) {
    auto it = obj.find(name);
    if (it == obj.end()) {
        if (required) malformed(std::string("missing field '") + name + "'");
        return {};
    }
    if (!it->is_string()) malformed(std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
}

FieldSpan parse_span(const json& v, const char* name) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
        malformed(std::string("span '") + name + "' must be [first, last]");
    return FieldSpan{v[0].get<std::ptrdiff_t>(), v[1].get<std::ptrdiff_t>()};
}

constexpr std::string_view kShiftBase = "`1234567890-=[]\\;',./";
constexpr std::string_view kShiftTop = "~!@#$%^&*()_+{}|:\"<>?";

std::string apply_modifiers(std::string_view key, bool shift, bool caps) {
    if (key.size() == 1) {
        const char c = key[0];
        if (c >= 'a' && c <= 'z') {
            return std::string(1, (shift != caps) ? static_cast<char>(c - 'a' + 'A') : c);
        }
        if (shift) {
            if (auto pos = kShiftBase.find(c); pos != std::string_view::npos) {
                return std::string(1, kShiftTop[pos]);
            }
        }
    }
    // Uppercase letters and anything else arrive already resolved by the client.
    return std::string(key);
}

void pop_code_point(std::string& text) {
    while (!text.empty() && (static_cast<unsigned char>(text.back()) & 0xC0) == 0x80) text.pop_back();
    if (!text.empty()) text.pop_back();
}

}  // namespace

std::span<const KeyEvent> LoginSession::field_events(Field f) const {
    const FieldSpan& s = span(f);
    if (s.empty()) return {};
    return std::span<const KeyEvent>(events).subspan(static_cast<std::size_t>(s.first), s.size());
}

void validate_session(const LoginSession& session) {
    const auto n = static_cast<std::ptrdiff_t>(session.events.size());
    for (std::size_t i = 1; i < session.events.size(); ++i) {
        if (session.events[i].t < session.events[i - 1].t) {
            throw Error(ErrorCode::UnsortedEvents,
                        "unsorted: event " + std::to_string(i) + " precedes its predecessor in time");
        }
    }
    std::map<std::string, int, std::less<>> held;
    for (std::size_t i = 0; i < session.events.size(); ++i) {
        const KeyEvent& ev = session.events[i];
        if (!std::isfinite(ev.t) || ev.t < 0) malformed("event " + std::to_string(i) + " has invalid timestamp");
        if (ev.action == KeyAction::Down) {
            ++held[ev.key];
        } else {
            auto it = held.find(ev.key);
            if (it == held.end() || it->second == 0) {
                throw Error(ErrorCode::OrphanKeyUp,
                            "orphan key-up: '" + ev.key + "' at event " + std::to_string(i));
            }
            --it->second;
        }
    }
    for (const auto* span : {&session.username_span, &session.password_span}) {
        if (span->empty()) {
            if (span->last != span->first - 1) malformed("span end precedes its start");
            continue;
        }
        if (span->first < 0 || span->last >= n) malformed("span out of range");
    }
    if (!session.username_span.empty() && !session.password_span.empty() &&
        session.username_span.last >= session.password_span.first) {
        throw Error(ErrorCode::OverlappingSpans, "overlapping field spans: username must precede password");
    }
    if (session.pressure) {
        if (session.pressure->size() != session.events.size())
            malformed("pressure must have one value per event");
        for (double p : *session.pressure) {
            if (!(p >= 0.0 && p <= 1.0)) malformed("pressure values must lie in [0,1]");
        }
    }
}

LoginSession session_from_json(const json& doc) {
    if (!doc.is_object()) malformed("document must be an object");
    LoginSession s;
    s.username_claim = string_field(doc, "username_claim", true);
    if (auto it = doc.find("context"); it != doc.end()) {
        if (!it->is_object()) malformed("context must be an object");
        s.context.geo = string_field(*it, "geo", false);
        s.context.timezone = string_field(*it, "timezone", false);
        s.context.device_id = string_field(*it, "device_id", false);
    }
    const json& fields = require(doc, "fields");
    if (!fields.is_object()) malformed("fields must be an object");
    s.username_span = parse_span(require(fields, "username"), "username");
    s.password_span = parse_span(require(fields, "password"), "password");

    const json& events = require(doc, "events");
    if (!events.is_array()) malformed("events must be an array");
    s.events.reserve(events.size());
    for (const json& e : events) {
        if (!e.is_object()) malformed("event must be an object");
        KeyEvent ev;
        ev.key = string_field(e, "key", true);
        const std::string action = string_field(e, "action", true);
        if (action == "down") {
            ev.action = KeyAction::Down;
        } else if (action == "up") {
            ev.action = KeyAction::Up;
        } else {
            malformed("action must be \"down\" or \"up\"");
        }
        const json& t = require(e, "t");
        if (!t.is_number()) malformed("event time must be a number");
        ev.t = t.get<double>();
        s.events.push_back(std::move(ev));
    }
    if (auto it = doc.find("pressure"); it != doc.end() && !it->is_null()) {
        if (!it->is_array()) malformed("pressure must be an array");
        std::vector<double> p;
        for (const json& v : *it) {
            if (!v.is_number()) malformed("pressure entries must be numbers");
            p.push_back(v.get<double>());
        }
        s.pressure = std::move(p);
    }
    validate_session(s);
    return s;
}

LoginSession parse_session(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedDocument,
                    "malformed session document at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return session_from_json(doc);
}

json session_to_json(const LoginSession& s) {
    json events = json::array();
    for (const KeyEvent& ev : s.events) {
        events.push_back({{"key", ev.key}, {"action", ev.action == KeyAction::Down ? "down" : "up"}, {"t", ev.t}});
    }
    json doc = {
        {"username_claim", s.username_claim},
        {"context", {{"geo", s.context.geo}, {"timezone", s.context.timezone}, {"device_id", s.context.device_id}}},
        {"fields",
         {{"username", {s.username_span.first, s.username_span.last}},
          {"password", {s.password_span.first, s.password_span.last}}}},
        {"events", std::move(events)},
    };
    if (s.pressure) doc["pressure"] = *s.pressure;
    return doc;
}

std::string reconstruct_text(const LoginSession& session, Field field) {
    std::string text;
    bool lshift = false;
    bool rshift = false;
    bool caps = false;
    for (const KeyEvent& ev : session.field_events(field)) {
        const std::string_view key = ev.key;
        const bool down = ev.action == KeyAction::Down;
        if (key == keys::kLeftShift) {
            lshift = down;
        } else if (key == keys::kRightShift) {
            rshift = down;
        } else if (key == keys::kCapsLock) {
            if (down) caps = !caps;
        } else if (key == keys::kBackspace) {
            if (down) pop_code_point(text);
        } else if (key == keys::kDelete || key == keys::kEnter) {
            // cursor sits at end of line: nothing to delete
        } else if (keys::is_printable(key)) {
            if (down) text += apply_modifiers(key, lshift || rshift, caps);
        } else {
            throw Error(ErrorCode::UnknownKey, "unknown key identifier '" + ev.key + "'");
        }
    }
    return text;
}

// ---------------------------------------------------------------------------

std::string_view feature_name(Feature f) noexcept {
    switch (f) {
        case Feature::TypingRate: return "typing_rate";
        case Feature::SessionTime: return "session_time";
        case Feature::MeanDwell: return "mean_dwell";
        case Feature::MeanFlight: return "mean_flight";
        case Feature::ShiftLeftCount: return "shift_left_count";
        case Feature::ShiftRightCount: return "shift_right_count";
        case Feature::CapsLockCount: return "capslock_count";
        case Feature::BackspaceCount: return "backspace_count";
        case Feature::DeleteCount: return "delete_count";
        case Feature::GeoMismatch: return "geo_mismatch";
    }
    return "?";
}

std::vector<std::string> feature_names(bool with_pressure) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < kCoreFeatureCount; ++i) names.emplace_back(feature_name(static_cast<Feature>(i)));
    if (with_pressure) names.emplace_back(kPressureFeatureName);
    return names;
}

std::vector<double> FeatureVector::clustered(bool with_pressure) const {
    std::vector<double> out(core.begin(), core.end());
    if (with_pressure) out.push_back(pressure.value_or(0.0));
    return out;
}

FeatureVector extract_features(const LoginSession& session, const std::optional<LoginContext>& enrolled,
                               std::int64_t timestamp_ms) {
    struct Stroke {
        double down;
        std::optional<double> up;
    };
    // Printable strokes of the password field in key-down order; key-ups are
    // matched to the oldest open key-down of the same key.
    std::vector<Stroke> strokes;
    std::map<std::string, std::deque<std::size_t>, std::less<>> open;
    for (const KeyEvent& ev : session.field_events(Field::Password)) {
        if (!keys::is_printable(ev.key)) continue;
        if (ev.action == KeyAction::Down) {
            open[ev.key].push_back(strokes.size());
            strokes.push_back({ev.t, std::nullopt});
        } else if (auto it = open.find(ev.key); it != open.end() && !it->second.empty()) {
            strokes[it->second.front()].up = ev.t;
            it->second.pop_front();
        }
    }
    std::erase_if(strokes, [](const Stroke& s) { return !s.up; });
    if (strokes.empty()) {
        throw Error(ErrorCode::InsufficientTelemetry,
                    "insufficient telemetry: password field has no complete key press");
    }

    FeatureVector fv;
    fv.timestamp_ms = timestamp_ms;

    double dwell_sum = 0.0;
    for (const Stroke& s : strokes) dwell_sum += *s.up - s.down;
    fv[Feature::MeanDwell] = dwell_sum / static_cast<double>(strokes.size());

    double flight_sum = 0.0;
    for (std::size_t i = 1; i < strokes.size(); ++i) flight_sum += strokes[i].down - *strokes[i - 1].up;
    fv[Feature::MeanFlight] = strokes.size() > 1 ? flight_sum / static_cast<double>(strokes.size() - 1) : 0.0;

    double first_t = 0.0;
    double last_t = 0.0;
    bool any = false;
    std::size_t printable_downs = 0;
    for (Field f : {Field::Username, Field::Password}) {
        auto evs = session.field_events(f);
        if (evs.empty()) continue;
        if (!any) first_t = evs.front().t;
        last_t = evs.back().t;
        any = true;
        for (const KeyEvent& ev : evs) {
            if (ev.action != KeyAction::Down) continue;
            if (keys::is_printable(ev.key)) {
                ++printable_downs;
            } else if (ev.key == keys::kLeftShift) {
                fv[Feature::ShiftLeftCount] += 1;
            } else if (ev.key == keys::kRightShift) {
                fv[Feature::ShiftRightCount] += 1;
            } else if (ev.key == keys::kCapsLock) {
                fv[Feature::CapsLockCount] += 1;
            } else if (ev.key == keys::kBackspace) {
                fv[Feature::BackspaceCount] += 1;
            } else if (ev.key == keys::kDelete) {
                fv[Feature::DeleteCount] += 1;
            }
        }
    }
    const double session_ms = last_t - first_t;
    fv[Feature::SessionTime] = session_ms;
    fv[Feature::TypingRate] = session_ms > 0 ? static_cast<double>(printable_downs) / (session_ms / 1000.0) : 0.0;
    fv[Feature::GeoMismatch] = (enrolled && enrolled->geo != session.context.geo) ? 1.0 : 0.0;

    if (session.pressure) {
        const auto& p = *session.pressure;
        double sum = 0.0;
        std::size_t count = 0;
        const FieldSpan& span = session.password_span;
        for (std::ptrdiff_t i = span.first; i <= span.last; ++i) {
            if (session.events[static_cast<std::size_t>(i)].action == KeyAction::Down) {
                sum += p[static_cast<std::size_t>(i)];
                ++count;
            }
        }
        fv.pressure = count > 0 ? sum / static_cast<double>(count) : 0.0;
    }
    return fv;
}

bool NormalizationRanges::covers(std::span<const double> raw) const noexcept {
    if (raw.size() != bounds.size()) return false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] < bounds[i].first || raw[i] > bounds[i].second) return false;
    }
    return true;
}

std::vector<double> normalize(std::span<const double> raw, const NormalizationRanges& ranges) {
    if (raw.size() != ranges.size()) {
        throw Error(ErrorCode::DimensionMismatch, "normalize: vector has " + std::to_string(raw.size()) +
                                                      " dimensions, ranges cover " + std::to_string(ranges.size()));
    }
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto [lo, hi] = ranges.bounds[i];
        out[i] = hi == lo ? 0.5 : std::clamp((raw[i] - lo) / (hi - lo), 0.0, 1.0);
    }
    return out;
}

NormalizationRanges update_ranges(NormalizationRanges ranges, std::span<const double> raw) {
    if (ranges.empty()) {
        for (double x : raw) ranges.bounds.emplace_back(x, x);
        return ranges;
    }
    if (raw.size() != ranges.size()) {
        throw Error(ErrorCode::DimensionMismatch, "update_ranges: vector has " + std::to_string(raw.size()) +
                                                      " dimensions, ranges cover " + std::to_string(ranges.size()));
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        ranges.bounds[i].first = std::min(ranges.bounds[i].first, raw[i]);
        ranges.bounds[i].second = std::max(ranges.bounds[i].second, raw[i]);
    }
    return ranges;
}

}  // namespace keydyn
