#include "keydyn/profile_store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <sodium.h>

#include "keydyn/error.hpp"
#include "keydyn/mfa.hpp"

namespace keydyn {

using nlohmann::json;

namespace {

constexpr std::size_t kSaltBytes = 16;
constexpr std::size_t kHashBytes = 32;
static_assert(kSaltBytes == crypto_pwhash_SALTBYTES);

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}

std::string to_hex(const unsigned char* data, std::size_t n) {
    std::string out(n * 2 + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), data, n);
    out.pop_back();
    return out;
}

std::vector<unsigned char> from_hex(std::string_view hex, std::size_t expected) {
    std::vector<unsigned char> out(expected);
    std::size_t len = 0;
    if (sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr, &len, nullptr) != 0 ||
        len != expected) {
        throw Error(ErrorCode::CorruptStore, "corrupt store: bad hex field");
    }
    return out;
}

std::vector<unsigned char> derive(std::string_view password, const std::vector<unsigned char>& salt,
                                  const HashParams& params) {
    ensure_sodium();
    if (params.algorithm != "argon2id13") {
        throw Error(ErrorCode::InvalidArgument, "unsupported password hash " + params.algorithm);
    }
    std::vector<unsigned char> out(kHashBytes);
    if (crypto_pwhash(out.data(), out.size(), password.data(), password.size(), salt.data(), params.opslimit,
                      static_cast<std::size_t>(params.memlimit), crypto_pwhash_ALG_ARGON2ID13) != 0) {
        throw Error(ErrorCode::StorageFailure, "password hashing ran out of memory");
    }
    return out;
}

json fv_to_json(const FeatureVector& fv) {
    json j = {{"t", fv.timestamp_ms}, {"v", fv.core}};
    if (fv.pressure) j["pressure"] = *fv.pressure;
    return j;
}

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::CorruptStore, "corrupt store: " + what); }

FeatureVector fv_from_json(const json& j) {
    FeatureVector fv;
    fv.timestamp_ms = j.at("t").get<std::int64_t>();
    const json& v = j.at("v");
    if (!v.is_array() || v.size() != kCoreFeatureCount) corrupt("history vector has wrong dimension");
    for (std::size_t i = 0; i < kCoreFeatureCount; ++i) fv.core[i] = v[i].get<double>();
    if (auto it = j.find("pressure"); it != j.end()) fv.pressure = it->get<double>();
    return fv;
}

}  // namespace

HashParams HashParams::interactive() {
    return {"argon2id13", crypto_pwhash_OPSLIMIT_INTERACTIVE, crypto_pwhash_MEMLIMIT_INTERACTIVE};
}

HashParams HashParams::minimal() {
    return {"argon2id13", crypto_pwhash_OPSLIMIT_MIN, crypto_pwhash_MEMLIMIT_MIN};
}

PasswordRecord hash_password(std::string_view password, const HashParams& params, RandomSource& rng) {
    std::vector<unsigned char> salt(kSaltBytes);
    for (std::size_t i = 0; i < kSaltBytes; i += 8) {
        std::uint64_t w = rng.next();
        for (std::size_t b = 0; b < 8; ++b) salt[i + b] = static_cast<unsigned char>(w >> (8 * b));
    }
    const auto hash = derive(password, salt, params);
    return {params, to_hex(salt.data(), salt.size()), to_hex(hash.data(), hash.size())};
}

bool verify_password(const UserProfile& profile, std::string_view typed_password) {
    const auto salt = from_hex(profile.password.salt_hex, kSaltBytes);
    const auto expected = from_hex(profile.password.hash_hex, kHashBytes);
    const auto actual = derive(typed_password, salt, profile.password.params);
    return sodium_memcmp(actual.data(), expected.data(), kHashBytes) == 0;
}

std::vector<std::vector<double>> UserProfile::clustered_history() const {
    std::vector<std::vector<double>> rows;
    rows.reserve(raw_history.size());
    for (const auto& fv : raw_history) rows.push_back(clustered(fv));
    return rows;
}

UserProfile build_profile(const std::string& username, std::string_view password,
                          const std::vector<LoginSession>& training, const EnrollOptions& options,
                          RandomSource& rng) {
    if (username.empty()) throw Error(ErrorCode::InvalidArgument, "username must not be empty");
    if (training.size() < options.min_history || training.empty()) {
        throw Error(ErrorCode::InsufficientTraining, "insufficient training: " + std::to_string(training.size()) +
                                                         " sessions, need " + std::to_string(options.min_history));
    }
    for (std::size_t i = 0; i < training.size(); ++i) {
        const LoginSession& s = training[i];
        if (reconstruct_text(s, Field::Username) != username) {
            throw Error(ErrorCode::TrainingMismatch,
                        "training session " + std::to_string(i) + ": typed username does not match");
        }
        if (reconstruct_text(s, Field::Password) != password) {
            throw Error(ErrorCode::TrainingMismatch,
                        "training session " + std::to_string(i) + ": typed password does not match");
        }
    }

    UserProfile p;
    p.username = username;
    p.enrolled_context = training.front().context;
    p.uses_pressure = std::all_of(training.begin(), training.end(), [](const auto& s) { return s.pressure.has_value(); });
    p.seed = options.seed;
    p.created_ms = options.now_ms;
    p.updated_ms = options.now_ms;
    for (std::size_t i = 0; i < training.size(); ++i) {
        FeatureVector fv = extract_features(training[i], p.enrolled_context,
                                            options.now_ms + static_cast<std::int64_t>(i));
        p.ranges = update_ranges(std::move(p.ranges), p.clustered(fv));
        p.raw_history.push_back(fv);
    }
    p.password = hash_password(password, options.hash, rng);
    return p;
}

// ---------------------------------------------------------------------------

ProfileStore::ProfileStore(const ProfileStore& other) {
    std::shared_lock lock(other.mutex_);
    users_ = other.users_;
}

ProfileStore& ProfileStore::operator=(const ProfileStore& other) {
    if (this == &other) return *this;
    std::map<std::string, UserProfile, std::less<>> copy;
    {
        std::shared_lock lock(other.mutex_);
        copy = other.users_;
    }
    std::unique_lock lock(mutex_);
    users_ = std::move(copy);
    return *this;
}

const UserProfile& ProfileStore::enroll(const std::string& username, std::string_view password,
                                        const std::vector<LoginSession>& training, const EnrollOptions& options,
                                        RandomSource& rng) {
    if (verify_username(username)) throw Error(ErrorCode::DuplicateUser, "duplicate user '" + username + "'");
    UserProfile p = build_profile(username, password, training, options, rng);
    std::unique_lock lock(mutex_);
    auto [it, inserted] = users_.emplace(username, std::move(p));
    if (!inserted) throw Error(ErrorCode::DuplicateUser, "duplicate user '" + username + "'");
    return it->second;
}

void ProfileStore::insert(UserProfile profile) {
    std::unique_lock lock(mutex_);
    const std::string name = profile.username;
    users_[name] = std::move(profile);
}

bool ProfileStore::verify_username(std::string_view username) const {
    if (username.empty()) return false;
    std::shared_lock lock(mutex_);
    return users_.find(username) != users_.end();
}

std::optional<UserProfile> ProfileStore::get(std::string_view username) const {
    std::shared_lock lock(mutex_);
    auto it = users_.find(username);
    if (it == users_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> ProfileStore::usernames() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> names;
    for (const auto& [name, _] : users_) names.push_back(name);
    return names;
}

std::size_t ProfileStore::size() const {
    std::shared_lock lock(mutex_);
    return users_.size();
}

void ProfileStore::append_success(const std::string& username, const FeatureVector& raw, std::int64_t timestamp_ms,
                                  AttemptResult result) {
    if (result == AttemptResult::Denied) {
        throw Error(ErrorCode::PreconditionFailed, "only granted or challenge-verified attempts join the history");
    }
    std::unique_lock lock(mutex_);
    auto it = users_.find(username);
    if (it == users_.end()) throw Error(ErrorCode::UnknownUser, "unknown user '" + username + "'");
    UserProfile& p = it->second;
    FeatureVector fv = raw;
    fv.timestamp_ms = timestamp_ms;
    const auto row = p.clustered(fv);
    p.ranges = update_ranges(std::move(p.ranges), row);
    auto pos = std::upper_bound(p.raw_history.begin(), p.raw_history.end(), timestamp_ms,
                                [](std::int64_t t, const FeatureVector& h) { return t < h.timestamp_ms; });
    p.raw_history.insert(pos, std::move(fv));
    p.updated_ms = std::max(p.updated_ms, timestamp_ms);
}

std::mutex& ProfileStore::user_mutex(const std::string& username) {
    std::lock_guard lock(locks_mutex_);
    auto& slot = user_locks_[username];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

bool ProfileStore::operator==(const ProfileStore& other) const {
    if (this == &other) return true;
    std::shared_lock a(mutex_);
    std::shared_lock b(other.mutex_);
    return users_ == other.users_;
}

json profile_to_json(const UserProfile& p) {
    json history = json::array();
    for (const auto& fv : p.raw_history) history.push_back(fv_to_json(fv));
    json ranges = json::array();
    for (const auto& [lo, hi] : p.ranges.bounds) ranges.push_back({lo, hi});
    return {
        {"username", p.username},
        {"password",
         {{"algorithm", p.password.params.algorithm},
          {"opslimit", p.password.params.opslimit},
          {"memlimit", p.password.params.memlimit},
          {"salt", p.password.salt_hex},
          {"hash", p.password.hash_hex}}},
        {"enrolled_context",
         {{"geo", p.enrolled_context.geo},
          {"timezone", p.enrolled_context.timezone},
          {"device_id", p.enrolled_context.device_id}}},
        {"uses_pressure", p.uses_pressure},
        {"features", feature_names(p.uses_pressure)},
        {"history", std::move(history)},
        {"ranges", std::move(ranges)},
        {"seed", p.seed},
        {"created_ms", p.created_ms},
        {"updated_ms", p.updated_ms},
    };
}

UserProfile profile_from_json(const json& j) {
    try {
        UserProfile p;
        p.username = j.at("username").get<std::string>();
        const json& pw = j.at("password");
        p.password.params.algorithm = pw.at("algorithm").get<std::string>();
        p.password.params.opslimit = pw.at("opslimit").get<std::uint64_t>();
        p.password.params.memlimit = pw.at("memlimit").get<std::uint64_t>();
        p.password.salt_hex = pw.at("salt").get<std::string>();
        p.password.hash_hex = pw.at("hash").get<std::string>();
        const json& ctx = j.at("enrolled_context");
        p.enrolled_context = {ctx.at("geo").get<std::string>(), ctx.at("timezone").get<std::string>(),
                              ctx.at("device_id").get<std::string>()};
        p.uses_pressure = j.at("uses_pressure").get<bool>();
        for (const json& h : j.at("history")) p.raw_history.push_back(fv_from_json(h));
        for (const json& r : j.at("ranges")) {
            if (!r.is_array() || r.size() != 2) corrupt("range entry must be [min, max]");
            p.ranges.bounds.emplace_back(r[0].get<double>(), r[1].get<double>());
        }
        p.seed = j.at("seed").get<std::uint64_t>();
        p.created_ms = j.at("created_ms").get<std::int64_t>();
        p.updated_ms = j.at("updated_ms").get<std::int64_t>();
        if (!p.ranges.empty() && p.ranges.size() != p.dimensions()) corrupt("ranges dimension for " + p.username);
        return p;
    } catch (const json::exception& e) {
        corrupt(std::string("profile field: ") + e.what());
    }
}

json ProfileStore::to_json() const {
    std::shared_lock lock(mutex_);
    json users = json::object();
    for (const auto& [name, p] : users_) users[name] = profile_to_json(p);
    return {{"version", kStoreVersion}, {"users", std::move(users)}};
}

ProfileStore ProfileStore::from_json(const json& doc) {
    if (!doc.is_object()) corrupt("top level must be an object");
    auto v = doc.find("version");
    if (v == doc.end() || !v->is_string()) corrupt("missing version");
    if (v->get<std::string>() != kStoreVersion) {
        throw Error(ErrorCode::VersionMismatch, "store version '" + v->get<std::string>() + "' but this build reads '" +
                                                    std::string(kStoreVersion) + "'");
    }
    auto users = doc.find("users");
    if (users == doc.end() || !users->is_object()) corrupt("missing users object");
    ProfileStore store;
    for (const auto& [name, pj] : users->items()) {
        UserProfile p = profile_from_json(pj);
        if (p.username != name) corrupt("user key '" + name + "' does not match profile");
        store.users_.emplace(name, std::move(p));
    }
    return store;
}

ProfileStore load_store(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return {};
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::StorageFailure, "cannot open store " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    json doc;
    try {
        doc = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::CorruptStore,
                    "corrupt store " + path.string() + " at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return ProfileStore::from_json(doc);
}

void save_store(const ProfileStore& store, const std::filesystem::path& path) {
    const std::string text = store.to_json().dump(1);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw Error(ErrorCode::StorageFailure, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::StorageFailure, "cannot replace " + path.string() + ": " + ec.message());
}

}  // namespace keydyn
