#include "keydyn/auth_service.hpp"

#include <chrono>
#include <iostream>

#include <httplib.h>

#include "keydyn/error.hpp"

namespace keydyn {

using nlohmann::json;

namespace {

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedDocument:
        case ErrorCode::UnsortedEvents:
        case ErrorCode::OrphanKeyUp:
        case ErrorCode::OverlappingSpans:
        case ErrorCode::UnknownKey:
        case ErrorCode::InsufficientTelemetry:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::InvalidArgument:
            return 400;
        case ErrorCode::UnknownUser:
        case ErrorCode::UnknownChallenge:
            return 404;
        case ErrorCode::ProfileNotTrained:
        case ErrorCode::DuplicateUser:
        case ErrorCode::ChallengeClosed:
            return 409;
        case ErrorCode::InsufficientTraining:
        case ErrorCode::TrainingMismatch:
            return 422;
        default:
            return 500;
    }
}

Response from_error(const Error& e) { return error_response(status_for(e.code()), to_string(e.code()), e.what()); }

Response bad_credentials() {
    Response r = error_response(403, "bad_credentials", "username or password incorrect");
    r.body["outcome"] = "denied";
    return r;
}

std::optional<std::string> string_member(const json& body, const char* name) {
    if (!body.is_object()) return std::nullopt;
    auto it = body.find(name);
    if (it == body.end() || !it->is_string()) return std::nullopt;
    return it->get<std::string>();
}

json risk_summary(const RiskAssessment& ra, bool explain) { return to_json(ra, explain); }

}  // namespace

std::uint64_t profile_seed(std::uint64_t service_seed, std::string_view username) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : username) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return restart_seed(service_seed, h);
}

std::int64_t system_now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

Response error_response(int status, std::string_view code, const std::string& detail) {
    return {status, {{"error", code}, {"detail", detail}}};
}

ClusterExport export_clusters(const UserProfile& profile, const AnomalyConfig& config,
                              const std::optional<FeatureVector>& attempt) {
    if (profile.raw_history.empty() || profile.raw_history.size() < config.min_history) {
        throw Error(ErrorCode::ProfileNotTrained, "profile not trained: " + profile.username);
    }
    ClusterExport out;
    out.dimensions = feature_names(profile.uses_pressure);
    const auto rows = profile.clustered_history();
    if (attempt) {
        AssessmentSpace space = make_assessment_space(rows, profile.ranges, profile.clustered(*attempt));
        out.history = std::move(space.history);
        out.attempt = std::move(space.attempt);
    } else {
        out.history = PointSet(profile.dimensions());
        for (const auto& r : rows) out.history.push_back(normalize(r, profile.ranges));
    }
    const std::size_t k_max = std::max<std::size_t>(1, std::min(config.k_cap, out.history.size() / 2));
    out.elbow = choose_k_elbow(out.history, 1, k_max, profile.seed, config.elbow);
    const ClusterModel& m = out.elbow.chosen_model();
    out.centroids = m.centroids;
    out.assignments = m.assignments;
    return out;
}

AuthService::AuthService(ServiceConfig config, ProfileStore store, RandomSource& rng, Notifier* notifier,
                         Clock clock)
    : config_(std::move(config)),
      store_(std::move(store)),
      rng_(rng),
      registry_(config_.mfa, rng_, notifier),
      clock_(std::move(clock)) {}

Response AuthService::username_step(const json& body) {
    auto username = string_member(body, "username");
    if (!username) return error_response(400, "malformed_request", "body must be {\"username\": string}");
    return {200, {{"exists", store_.verify_username(*username)}}};
}

Response AuthService::login_attempt(const json& session_doc, bool explain) {
    LoginSession session;
    try {
        session = session_from_json(session_doc);
    } catch (const Error& e) {
        return from_error(e);
    }
    const std::string& username = session.username_claim;
    if (!store_.verify_username(username)) return bad_credentials();

    std::lock_guard user_lock(store_.user_mutex(username));
    auto profile = store_.get(username);
    if (!profile) return bad_credentials();

    try {
        if (!session.username_span.empty() && reconstruct_text(session, Field::Username) != username) {
            return bad_credentials();
        }
        if (!verify_password(*profile, reconstruct_text(session, Field::Password))) return bad_credentials();

        const std::int64_t now = clock_();
        FeatureVector fv = extract_features(session, profile->enrolled_context, now);
        if (profile->uses_pressure && !fv.pressure) {
            return error_response(400, "insufficient_telemetry", "profile requires per-event pressure");
        }
        AssessmentSpace space =
            make_assessment_space(profile->clustered_history(), profile->ranges, profile->clustered(fv));
        RiskAssessment ra = assess(space.history, space.attempt, profile->seed, config_.anomaly);

        const DecisionKind kind = decide(ra);
        if (kind == DecisionKind::Grant) {
            learn(username, fv, AttemptResult::Granted);
            return {200, {{"outcome", "granted"}, {"risk", risk_summary(ra, explain)}}};
        }
        const Challenge c =
            registry_.issue(kind == DecisionKind::ChallengeOtp ? ChallengeKind::Otp : ChallengeKind::Oob, username, now);
        {
            std::lock_guard lock(pending_mutex_);
            pending_[c.id] = {username, fv, now};
        }
        json challenge = {{"id", c.id}, {"kind", to_string(c.kind)}, {"expires_at", c.expires_at}};
        if (c.delivery_error) challenge["delivery_error"] = c.delivery_detail;
        return {202, {{"outcome", "challenge"}, {"challenge", std::move(challenge)}, {"risk", risk_summary(ra, explain)}}};
    } catch (const Error& e) {
        return from_error(e);
    }
}

Response AuthService::resolve(std::pair<VerifyOutcome, Challenge> result) {
    const auto& [outcome, c] = result;
    std::optional<PendingAttempt> pending;
    if (c.terminal()) {
        std::lock_guard lock(pending_mutex_);
        if (auto it = pending_.find(c.id); it != pending_.end()) {
            pending = std::move(it->second);
            pending_.erase(it);
        }
    }
    switch (outcome) {
        case VerifyOutcome::Verified:
            if (pending) {
                std::lock_guard user_lock(store_.user_mutex(pending->username));
                learn(pending->username, pending->features, AttemptResult::ChallengeVerified);
            }
            return {200, {{"outcome", "granted"}}};
        case VerifyOutcome::Retry:
            return {403, {{"outcome", "retry"}, {"attempts_left", c.attempts_left}}};
        case VerifyOutcome::Failed:
            return {403, {{"outcome", "denied"}, {"reason", "failed"}}};
        case VerifyOutcome::Expired:
            return {403, {{"outcome", "denied"}, {"reason", "expired"}}};
    }
    return error_response(500, "internal", "unhandled challenge outcome");
}

Response AuthService::verify_otp(const std::string& challenge_id, const json& body) {
    auto code = string_member(body, "code");
    if (!code) return error_response(400, "malformed_request", "body must be {\"code\": string}");
    try {
        auto found = registry_.find(challenge_id);
        if (found && found->kind != ChallengeKind::Otp) {
            return error_response(400, "wrong_challenge_kind", "challenge expects an out-of-band token");
        }
        return resolve(registry_.verify_otp(challenge_id, *code, clock_()));
    } catch (const Error& e) {
        return from_error(e);
    }
}

Response AuthService::approve_oob(const std::string& challenge_id, const json& body) {
    auto token = string_member(body, "token");
    if (!token) return error_response(400, "malformed_request", "body must be {\"token\": string}");
    try {
        auto found = registry_.find(challenge_id);
        if (found && found->kind != ChallengeKind::Oob) {
            return error_response(400, "wrong_challenge_kind", "challenge expects a one-time code");
        }
        return resolve(registry_.approve_oob(challenge_id, *token, clock_()));
    } catch (const Error& e) {
        return from_error(e);
    }
}

Response AuthService::enroll(const json& body) {
    auto username = string_member(body, "username");
    auto password = string_member(body, "password");
    if (!username || !password || !body.contains("sessions") || !body["sessions"].is_array()) {
        return error_response(400, "malformed_request",
                              "body must be {\"username\": string, \"password\": string, \"sessions\": [...]}");
    }
    try {
        std::vector<LoginSession> sessions;
        for (const json& doc : body["sessions"]) sessions.push_back(session_from_json(doc));
        EnrollOptions opts;
        opts.min_history = config_.anomaly.min_history;
        opts.hash = config_.hash;
        opts.seed = profile_seed(config_.seed, *username);
        opts.now_ms = clock_();
        std::lock_guard user_lock(store_.user_mutex(*username));
        const UserProfile& p = store_.enroll(*username, *password, sessions, opts, rng_);
        const auto trained = p.raw_history.size();
        persist();
        return {201, {{"trained", trained}}};
    } catch (const Error& e) {
        return from_error(e);
    }
}

Response AuthService::profile_summary(const std::string& username) const {
    auto p = store_.get(username);
    if (!p) return error_response(404, "unknown_user", "no profile for '" + username + "'");
    json ranges = json::array();
    for (const auto& [lo, hi] : p->ranges.bounds) ranges.push_back({lo, hi});
    return {200,
            {{"username", p->username},
             {"history", p->raw_history.size()},
             {"features", feature_names(p->uses_pressure)},
             {"ranges", std::move(ranges)},
             {"enrolled_context",
              {{"geo", p->enrolled_context.geo},
               {"timezone", p->enrolled_context.timezone},
               {"device_id", p->enrolled_context.device_id}}},
             {"password_hash", p->password.params.algorithm},
             {"created_ms", p->created_ms},
             {"updated_ms", p->updated_ms}}};
}

Response AuthService::clusters(const std::string& username) const {
    auto p = store_.get(username);
    if (!p) return error_response(404, "unknown_user", "no profile for '" + username + "'");
    try {
        const ClusterExport ex = export_clusters(*p, config_.anomaly);
        json elbow = json::array();
        for (const auto& pt : ex.elbow.curve) elbow.push_back({{"k", pt.k}, {"wcss", pt.wcss}});
        return {200,
                {{"dimensions", ex.dimensions},
                 {"k", ex.centroids.size()},
                 {"points", ex.history.rows()},
                 {"assignments", ex.assignments},
                 {"centroids", ex.centroids.rows()},
                 {"elbow", std::move(elbow)}}};
    } catch (const Error& e) {
        return from_error(e);
    }
}

void AuthService::learn(const std::string& username, const FeatureVector& fv, AttemptResult result) {
    try {
        store_.append_success(username, fv, fv.timestamp_ms, result);
        persist();
    } catch (const std::exception& e) {
        std::clog << "warning: learning skipped for " << username << ": " << e.what() << '\n';
    }
}

void AuthService::persist() {
    if (config_.store_path.empty()) return;
    std::lock_guard lock(save_mutex_);
    save_store(store_, config_.store_path);
}

// ---------------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

template <typename Handler>
void with_body(const httplib::Request& req, httplib::Response& res, Handler&& handler) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
        reply(res, error_response(400, "malformed_request", "request body is not valid JSON"));
        return;
    }
    reply(res, handler(body));
}

}  // namespace

HttpServer::HttpServer(AuthService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto& s = *server_;
    s.Post("/v1/login/username", [this](const httplib::Request& req, httplib::Response& res) {
        with_body(req, res, [this](const json& b) { return service_.username_step(b); });
    });
    s.Post("/v1/login/attempt", [this](const httplib::Request& req, httplib::Response& res) {
        const bool explain = req.has_param("explain") && req.get_param_value("explain") == "true";
        with_body(req, res, [this, explain](const json& b) { return service_.login_attempt(b, explain); });
    });
    s.Post(R"(/v1/challenge/([^/]+)/otp)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        with_body(req, res, [this, &id](const json& b) { return service_.verify_otp(id, b); });
    });
    s.Post(R"(/v1/challenge/([^/]+)/oob)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        with_body(req, res, [this, &id](const json& b) { return service_.approve_oob(id, b); });
    });
    // The link delivered to the second device approves on a plain GET.
    s.Get(R"(/v1/challenge/([^/]+)/oob)", [this](const httplib::Request& req, httplib::Response& res) {
        reply(res, service_.approve_oob(req.matches[1], {{"token", req.get_param_value("token")}}));
    });
    s.Post("/v1/enroll", [this](const httplib::Request& req, httplib::Response& res) {
        with_body(req, res, [this](const json& b) { return service_.enroll(b); });
    });
    s.Get(R"(/v1/admin/users/([^/]+)/profile)", [this](const httplib::Request& req, httplib::Response& res) {
        reply(res, service_.profile_summary(req.matches[1]));
    });
    s.Get(R"(/v1/admin/users/([^/]+)/clusters)", [this](const httplib::Request& req, httplib::Response& res) {
        reply(res, service_.clusters(req.matches[1]));
    });
    s.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    s.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    });
    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string detail = "unexpected failure";
        try {
            if (ep) std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            detail = e.what();
        } catch (...) {
        }
        reply(res, error_response(500, "internal", detail));
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }

void HttpServer::start() {
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace keydyn
