#include "keydyn/harness.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "keydyn/error.hpp"

namespace keydyn {

using nlohmann::json;

void TypistModel::validate() const {
    if (!(dwell_mean > 0) || !(flight_mean > 0)) throw Error(ErrorCode::InvalidArgument, "typist means must be positive");
    if (dwell_std < 0 || flight_std < 0) throw Error(ErrorCode::InvalidArgument, "typist deviations must be >= 0");
    if (!(error_rate >= 0 && error_rate <= 1)) throw Error(ErrorCode::InvalidArgument, "error_rate must be in [0,1]");
}

json to_json(const TypistModel& m) {
    return {{"dwell_mean", m.dwell_mean},   {"dwell_std", m.dwell_std},   {"flight_mean", m.flight_mean},
            {"flight_std", m.flight_std},   {"error_rate", m.error_rate},
            {"shift_style", m.shift_style == ShiftStyle::ShiftKey ? "shift" : "capslock"},
            {"seed", m.seed}};
}

TypistModel typist_from_json(const json& j) {
    TypistModel m;
    m.dwell_mean = j.value("dwell_mean", m.dwell_mean);
    m.dwell_std = j.value("dwell_std", m.dwell_std);
    m.flight_mean = j.value("flight_mean", m.flight_mean);
    m.flight_std = j.value("flight_std", m.flight_std);
    m.error_rate = j.value("error_rate", m.error_rate);
    const std::string style = j.value("shift_style", std::string("shift"));
    if (style == "shift") {
        m.shift_style = ShiftStyle::ShiftKey;
    } else if (style == "capslock") {
        m.shift_style = ShiftStyle::CapsLock;
    } else {
        throw Error(ErrorCode::InvalidArgument, "shift_style must be \"shift\" or \"capslock\"");
    }
    m.seed = j.value("seed", m.seed);
    m.validate();
    return m;
}

namespace {

constexpr std::string_view kShiftBase = "`1234567890-=[]\\;',./";
constexpr std::string_view kShiftTop = "~!@#$%^&*()_+{}|:\"<>?";

class Typist {
public:
    Typist(const TypistModel& model, std::mt19937_64& rng, std::vector<KeyEvent>& events)
        : m_(model), rng_(rng), events_(events) {}

    void type(const std::string& text) {
        for (std::size_t i = 0; i < text.size();) {
            std::size_t len = 1;
            const auto lead = static_cast<unsigned char>(text[i]);
            if (lead >= 0xF0) len = 4;
            else if (lead >= 0xE0) len = 3;
            else if (lead >= 0xC0) len = 2;
            const std::string ch = text.substr(i, len);
            i += len;
            if (m_.error_rate > 0 && coin() < m_.error_rate) {
                stroke(wrong_letter(ch), false);
                stroke(std::string(keys::kBackspace), false);
            }
            produce(ch);
        }
        if (caps_on_) toggle_caps();
    }

    double cursor() const { return t_; }
    void set_cursor(double t) { t_ = t; }

private:
    double coin() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    double sample(double mean, double sd) {
        double v = mean;
        if (sd > 0) v = std::normal_distribution<double>(mean, sd)(rng_);
        return std::max(1.0, v);
    }
    double dwell() { return sample(m_.dwell_mean, m_.dwell_std); }
    double flight() { return sample(m_.flight_mean, m_.flight_std); }

    std::string wrong_letter(const std::string& intended) {
        char c = 'a';
        do {
            c = static_cast<char>('a' + static_cast<int>(rng_() % 26));
        } while (intended.size() == 1 && (c == intended[0] || c - 'a' + 'A' == intended[0]));
        return std::string(1, c);
    }

    void emit(const std::string& key, KeyAction a, double t) { events_.push_back({key, a, t}); }

    // Plain press: down at the cursor, up after a dwell, cursor advances by a
    // flight past the release.
    void stroke(const std::string& key, bool shifted) {
        if (shifted) {
            const std::string shift(keys::kLeftShift);
            emit(shift, KeyAction::Down, t_);
            t_ += 0.5 * flight();
            emit(key, KeyAction::Down, t_);
            t_ += dwell();
            emit(key, KeyAction::Up, t_);
            t_ += 0.25 * dwell();
            emit(shift, KeyAction::Up, t_);
        } else {
            emit(key, KeyAction::Down, t_);
            t_ += dwell();
            emit(key, KeyAction::Up, t_);
        }
        t_ += flight();
    }

    void toggle_caps() {
        stroke(std::string(keys::kCapsLock), false);
        caps_on_ = !caps_on_;
    }

    void produce(const std::string& ch) {
        if (ch.size() == 1) {
            const char c = ch[0];
            if (c >= 'A' && c <= 'Z') {
                const std::string base(1, static_cast<char>(c - 'A' + 'a'));
                if (m_.shift_style == ShiftStyle::CapsLock) {
                    if (!caps_on_) toggle_caps();
                    stroke(base, false);
                } else {
                    stroke(base, true);
                }
                return;
            }
            if (c >= 'a' && c <= 'z' && caps_on_) toggle_caps();
            if (auto pos = kShiftTop.find(c); pos != std::string_view::npos) {
                stroke(std::string(1, kShiftBase[pos]), true);
                return;
            }
        }
        stroke(ch, false);
    }

    const TypistModel& m_;
    std::mt19937_64& rng_;
    std::vector<KeyEvent>& events_;
    double t_ = 0.0;
    bool caps_on_ = false;
};

}  // namespace

LoginSession simulate_session(const TypistModel& model, const std::string& username, const std::string& password,
                              std::mt19937_64& rng, const LoginContext& context) {
    model.validate();
    LoginSession s;
    s.username_claim = username;
    s.context = context;
    Typist typist(model, rng, s.events);
    typist.type(username);
    s.username_span = {0, static_cast<std::ptrdiff_t>(s.events.size()) - 1};
    typist.type(password);
    s.password_span = {s.username_span.last + 1, static_cast<std::ptrdiff_t>(s.events.size()) - 1};
    validate_session(s);
    return s;
}

// ---------------------------------------------------------------------------

std::vector<ScenarioAttempt> parse_scenario(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_array()) throw Error(ErrorCode::MalformedDocument, "scenario must be a JSON array");
    std::vector<ScenarioAttempt> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& item = doc[i];
        const std::string where = "scenario entry " + std::to_string(i);
        if (!item.is_object()) throw Error(ErrorCode::MalformedDocument, where + " must be an object");
        ScenarioAttempt a;
        if (auto it = item.find("session"); it != item.end()) {
            a.session = *it;
        } else if (auto f = item.find("session_file"); f != item.end()) {
            std::filesystem::path p = f->get<std::string>();
            if (p.is_relative()) p = base_dir / p;
            std::ifstream in(p);
            if (!in) throw Error(ErrorCode::MalformedDocument, where + ": cannot read " + p.string());
            a.session = json::parse(in, nullptr, false);
            if (a.session.is_discarded()) throw Error(ErrorCode::MalformedDocument, where + ": bad JSON in " + p.string());
        } else {
            throw Error(ErrorCode::MalformedDocument, where + " needs \"session\" or \"session_file\"");
        }
        const std::string truth = item.value("truth", std::string("legit"));
        if (truth == "legit") a.truth = Truth::Legit;
        else if (truth == "imposter") a.truth = Truth::Imposter;
        else throw Error(ErrorCode::MalformedDocument, where + ": truth must be legit or imposter");
        const std::string behavior = item.value("challenge_behavior", std::string("pass"));
        if (behavior == "pass") a.challenge_behavior = ChallengeBehavior::Pass;
        else if (behavior == "fail") a.challenge_behavior = ChallengeBehavior::Fail;
        else throw Error(ErrorCode::MalformedDocument, where + ": challenge_behavior must be pass or fail");
        out.push_back(std::move(a));
    }
    return out;
}

json scenario_to_json(const std::vector<ScenarioAttempt>& attempts) {
    json out = json::array();
    for (const auto& a : attempts) {
        out.push_back({{"session", a.session},
                       {"truth", a.truth == Truth::Legit ? "legit" : "imposter"},
                       {"challenge_behavior", a.challenge_behavior == ChallengeBehavior::Pass ? "pass" : "fail"}});
    }
    return out;
}

namespace {
double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }
}  // namespace

double MetricsReport::fpr() const noexcept { return ratio(imposter_granted, imposter_total); }
double MetricsReport::fnr() const noexcept { return ratio(legit_denied, legit_total); }
double MetricsReport::gar() const noexcept { return ratio(legit_granted, legit_total); }

MetricsReport MetricsReport::from_log(const std::vector<AttemptLog>& log) {
    MetricsReport r;
    for (const AttemptLog& a : log) {
        if (a.truth == Truth::Legit) {
            ++r.legit_total;
            ++(a.granted ? r.legit_granted : r.legit_denied);
        } else {
            ++r.imposter_total;
            ++(a.granted ? r.imposter_granted : r.imposter_denied);
        }
        if (a.challenge_kind == "otp") ++r.challenged_otp;
        if (a.challenge_kind == "oob") ++r.challenged_oob;
        if (a.status == 403 && !a.degree) ++r.credential_failures;
        if (a.global_pass == false) ++r.global_failures;
        if (a.degree == "normal") ++r.degree_normal;
        if (a.degree == "first_degree") ++r.degree_first;
        if (a.degree == "second_degree") ++r.degree_second;
    }
    return r;
}

json to_json(const MetricsReport& r) {
    return {{"counts",
             {{"legit_total", r.legit_total},
              {"legit_granted", r.legit_granted},
              {"legit_denied", r.legit_denied},
              {"imposter_total", r.imposter_total},
              {"imposter_granted", r.imposter_granted},
              {"imposter_denied", r.imposter_denied},
              {"challenged_otp", r.challenged_otp},
              {"challenged_oob", r.challenged_oob},
              {"credential_failures", r.credential_failures},
              {"global_failures", r.global_failures},
              {"degree_normal", r.degree_normal},
              {"degree_first", r.degree_first},
              {"degree_second", r.degree_second}}},
            {"FPR", r.fpr()},
            {"FNR", r.fnr()},
            {"GAR", r.gar()}};
}

json to_json(const AttemptLog& a) {
    json j = {{"index", a.index},
              {"truth", a.truth == Truth::Legit ? "legit" : "imposter"},
              {"username", a.username},
              {"status", a.status},
              {"outcome", a.granted ? "granted" : "denied"}};
    if (a.degree) j["degree"] = *a.degree;
    if (a.global_pass) j["global_pass"] = *a.global_pass;
    if (a.challenge_kind) j["challenge"] = *a.challenge_kind;
    if (a.challenge_result) j["challenge_result"] = *a.challenge_result;
    if (a.error) j["error"] = *a.error;
    return j;
}

// ---------------------------------------------------------------------------

InProcessBackend::InProcessBackend(ServiceConfig config, ProfileStore store, std::uint64_t seed) : rng_(seed) {
    config.store_path.clear();
    auto tick = std::make_shared<std::int64_t>(1'700'000'000'000);
    service_ = std::make_unique<AuthService>(std::move(config), std::move(store), rng_, &notifier_,
                                             [tick] { return *tick += 1000; });
}

Response InProcessBackend::login_attempt(const json& session_doc) { return service_->login_attempt(session_doc); }

Response InProcessBackend::verify_otp(const std::string& id, const std::string& code) {
    return service_->verify_otp(id, {{"code", code}});
}

Response InProcessBackend::approve_oob(const std::string& id, const std::string& token) {
    return service_->approve_oob(id, {{"token", token}});
}

std::optional<std::string> InProcessBackend::side_channel(const std::string& challenge_id, const std::string&,
                                                          const std::string&) {
    return notifier_.payload_for(challenge_id);
}

HttpBackend::HttpBackend(std::string base_url, std::filesystem::path outbox)
    : base_url_(std::move(base_url)), outbox_(std::move(outbox)) {}

Response HttpBackend::post(const std::string& path, const json& body) {
    httplib::Client client(base_url_);
    client.set_read_timeout(30, 0);
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) return error_response(0, "transport", httplib::to_string(res.error()));
    json parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) parsed = json::object();
    return {res->status, std::move(parsed)};
}

Response HttpBackend::login_attempt(const json& session_doc) { return post("/v1/login/attempt", session_doc); }

Response HttpBackend::verify_otp(const std::string& id, const std::string& code) {
    return post("/v1/challenge/" + id + "/otp", {{"code", code}});
}

Response HttpBackend::approve_oob(const std::string& id, const std::string& token) {
    return post("/v1/challenge/" + id + "/oob", {{"token", token}});
}

std::optional<std::string> HttpBackend::side_channel(const std::string& challenge_id, const std::string& kind,
                                                     const std::string& username) {
    const auto entries = read_outbox(outbox_);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->kind != kind || it->user != username) continue;
        if (kind == "oob" && it->payload.find(challenge_id) == std::string::npos) continue;
        return it->payload;
    }
    return std::nullopt;
}

ReplayResult replay(AuthBackend& backend, const std::vector<ScenarioAttempt>& attempts) {
    ReplayResult result;
    for (std::size_t i = 0; i < attempts.size(); ++i) {
        const ScenarioAttempt& a = attempts[i];
        AttemptLog entry;
        entry.index = i;
        entry.truth = a.truth;
        entry.username = a.session.value("username_claim", std::string());

        const Response r = backend.login_attempt(a.session);
        entry.status = r.status;
        if (auto risk = r.body.find("risk"); risk != r.body.end()) {
            entry.degree = risk->value("degree", std::string());
            entry.global_pass = risk->value("global_pass", false);
        }
        if (r.status == 200) {
            entry.granted = true;
        } else if (r.status == 202) {
            const std::string id = r.body["challenge"]["id"].get<std::string>();
            const std::string kind = r.body["challenge"]["kind"].get<std::string>();
            entry.challenge_kind = kind;
            Response last;
            if (a.challenge_behavior == ChallengeBehavior::Pass) {
                const auto payload = backend.side_channel(id, kind, entry.username);
                if (!payload) {
                    entry.error = "side channel delivered nothing";
                } else if (kind == "otp") {
                    last = backend.verify_otp(id, *payload);
                } else {
                    last = backend.approve_oob(id, token_from_oob_payload(*payload).value_or(""));
                }
            } else {
                // No second device: guess until the challenge closes.
                for (int guess = 0; guess < 16; ++guess) {
                    last = kind == "otp" ? backend.verify_otp(id, std::string(6, static_cast<char>('0' + guess % 10)))
                                         : backend.approve_oob(id, std::string(32, '0'));
                    if (last.body.value("outcome", std::string()) != "retry") break;
                }
            }
            entry.granted = last.status == 200;
            entry.challenge_result = last.body.value("outcome", std::string()) +
                                     (last.body.contains("reason") ? ":" + last.body["reason"].get<std::string>() : "");
        } else if (r.status != 403) {
            entry.error = r.body.value("error", std::string("unexpected status"));
        }
        result.log.push_back(std::move(entry));
    }
    result.metrics = MetricsReport::from_log(result.log);
    return result;
}

}  // namespace keydyn
