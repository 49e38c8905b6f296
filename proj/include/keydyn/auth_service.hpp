#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "keydyn/anomaly.hpp"
#include "keydyn/mfa.hpp"
#include "keydyn/profile_store.hpp"

namespace httplib {
class Server;
}

namespace keydyn {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8807;
    std::filesystem::path store_path;  // empty: keep the store in memory only
    std::filesystem::path outbox_path = "outbox.log";
    AnomalyConfig anomaly{};
    MfaConfig mfa{};
    HashParams hash = HashParams::interactive();
    std::uint64_t seed = 0;
};

struct Response {
    int status = 200;
    nlohmann::json body = nlohmann::json::object();
};

using Clock = std::function<std::int64_t()>;

/// Clustering seed stored in a new profile; stable across builds.
std::uint64_t profile_seed(std::uint64_t service_seed, std::string_view username) noexcept;

/// Wall-clock milliseconds since the Unix epoch.
std::int64_t system_now_ms();

/// Scatter/elbow data for a user's current model.
struct ClusterExport {
    std::vector<std::string> dimensions;
    PointSet history;
    PointSet centroids;
    std::vector<std::size_t> assignments;
    std::optional<std::vector<double>> attempt;
    ElbowReport elbow;
};

/// Rebuilds the user's model from the stored seed. With an attempt the space
/// is widened to include it, exactly as during assessment.
ClusterExport export_clusters(const UserProfile& profile, const AnomalyConfig& config,
                              const std::optional<FeatureVector>& attempt = std::nullopt);

/// The login pipeline without any transport: each handler maps a request body
/// onto a status and a JSON reply.
class AuthService {
public:
    AuthService(ServiceConfig config, ProfileStore store, RandomSource& rng, Notifier* notifier,
                Clock clock = system_now_ms);

    Response username_step(const nlohmann::json& body);
    Response login_attempt(const nlohmann::json& session_doc, bool explain = false);
    Response verify_otp(const std::string& challenge_id, const nlohmann::json& body);
    Response approve_oob(const std::string& challenge_id, const nlohmann::json& body);
    Response enroll(const nlohmann::json& body);
    Response profile_summary(const std::string& username) const;
    Response clusters(const std::string& username) const;

    const ProfileStore& store() const noexcept { return store_; }
    const ServiceConfig& config() const noexcept { return config_; }
    std::optional<Challenge> challenge(const std::string& id) const { return registry_.find(id); }

private:
    struct PendingAttempt {
        std::string username;
        FeatureVector features;
        std::int64_t received_ms = 0;
    };

    Response resolve(std::pair<VerifyOutcome, Challenge> result);
    void learn(const std::string& username, const FeatureVector& fv, AttemptResult result);
    void persist();

    ServiceConfig config_;
    ProfileStore store_;
    LockedRandom rng_;
    ChallengeRegistry registry_;
    Clock clock_;
    std::mutex pending_mutex_;
    std::map<std::string, PendingAttempt> pending_;
    std::mutex save_mutex_;
};

Response error_response(int status, std::string_view code, const std::string& detail);

/// HTTP/JSON front end over an AuthService.
class HttpServer {
public:
    explicit HttpServer(AuthService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds to `port`, or to an ephemeral port when 0. Returns the bound port
    /// or -1.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    bool listen_after_bind();
    /// Runs listen_after_bind() on a background thread.
    void start();
    void stop();

private:
    AuthService& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace keydyn
