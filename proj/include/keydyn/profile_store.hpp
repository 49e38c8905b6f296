#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "keydyn/session.hpp"

namespace keydyn {

class RandomSource;

inline constexpr std::string_view kStoreVersion = "keydyn-store/1";

/// Argon2id cost parameters, stored next to every hash.
struct HashParams {
    std::string algorithm = "argon2id13";
    std::uint64_t opslimit = 2;
    std::uint64_t memlimit = 64ULL << 20;

    static HashParams interactive();
    /// Cheapest legal parameters; for tests and synthetic experiments.
    static HashParams minimal();

    bool operator==(const HashParams&) const = default;
};

struct PasswordRecord {
    HashParams params;
    std::string salt_hex;  // 16 bytes
    std::string hash_hex;  // 32 bytes

    bool operator==(const PasswordRecord&) const = default;
};

PasswordRecord hash_password(std::string_view password, const HashParams& params, RandomSource& rng);

struct UserProfile {
    std::string username;
    PasswordRecord password;
    LoginContext enrolled_context;
    bool uses_pressure = false;
    std::vector<FeatureVector> raw_history;  // ascending timestamp_ms
    NormalizationRanges ranges;
    std::uint64_t seed = 0;
    std::int64_t created_ms = 0;
    std::int64_t updated_ms = 0;

    std::size_t dimensions() const noexcept { return kCoreFeatureCount + (uses_pressure ? 1 : 0); }
    std::vector<double> clustered(const FeatureVector& fv) const { return fv.clustered(uses_pressure); }
    std::vector<std::vector<double>> clustered_history() const;

    bool operator==(const UserProfile&) const = default;
};

/// Constant-time comparison against the stored salted hash.
bool verify_password(const UserProfile& profile, std::string_view typed_password);

struct EnrollOptions {
    std::size_t min_history = 10;
    HashParams hash = HashParams::interactive();
    std::uint64_t seed = 0;
    std::int64_t now_ms = 0;
};

/// Validates the training sessions and builds a profile without touching any
/// store. Throws InsufficientTraining or TrainingMismatch (naming the index).
UserProfile build_profile(const std::string& username, std::string_view password,
                          const std::vector<LoginSession>& training, const EnrollOptions& options,
                          RandomSource& rng);

enum class AttemptResult { Granted, ChallengeVerified, Denied };

class ProfileStore {
public:
    ProfileStore() = default;
    ProfileStore(const ProfileStore& other);
    ProfileStore& operator=(const ProfileStore& other);

    const UserProfile& enroll(const std::string& username, std::string_view password,
                              const std::vector<LoginSession>& training, const EnrollOptions& options,
                              RandomSource& rng);
    void insert(UserProfile profile);

    bool verify_username(std::string_view username) const;
    std::optional<UserProfile> get(std::string_view username) const;
    std::vector<std::string> usernames() const;
    std::size_t size() const;

    /// Adds a successful attempt to the user's history and widens the ranges.
    /// Denied attempts are refused with PreconditionFailed.
    void append_success(const std::string& username, const FeatureVector& raw, std::int64_t timestamp_ms,
                        AttemptResult result);

    /// Serializes writers on one user; other users proceed independently.
    std::mutex& user_mutex(const std::string& username);

    nlohmann::json to_json() const;
    static ProfileStore from_json(const nlohmann::json& doc);

    bool operator==(const ProfileStore& other) const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, UserProfile, std::less<>> users_;
    std::mutex locks_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> user_locks_;
};

/// Throws CorruptStore (with byte offset) or VersionMismatch. A missing file
/// yields an empty store.
ProfileStore load_store(const std::filesystem::path& path);
/// Writes a temporary file next to `path` and renames it into place.
void save_store(const ProfileStore& store, const std::filesystem::path& path);

nlohmann::json profile_to_json(const UserProfile& p);
UserProfile profile_from_json(const nlohmann::json& j);

}  // namespace keydyn
