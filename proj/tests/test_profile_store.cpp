#include <gtest/gtest.h>

#include <fstream>

#include "keydyn/error.hpp"
#include "keydyn/profile_store.hpp"
#include "support.hpp"

using namespace keydyn;
using namespace keydyn::test;
using nlohmann::json;

namespace {

EnrollOptions fast_options() {
    EnrollOptions o;
    o.hash = HashParams::minimal();
    o.seed = 5;
    o.now_ms = 1000;
    return o;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Enroll, TenSessionsBuildProfile) {
    ProfileStore store;
    SeededRandom rng(1);
    const UserProfile& p = store.enroll(kUser, kPassword, training_sessions(10, 3), fast_options(), rng);
    EXPECT_EQ(p.raw_history.size(), 10u);
    EXPECT_EQ(p.ranges.size(), kCoreFeatureCount);
    EXPECT_FALSE(p.uses_pressure);
    for (const auto& fv : p.raw_history) EXPECT_TRUE(p.ranges.covers(fv.clustered(false)));
    EXPECT_TRUE(store.verify_username(kUser));
    EXPECT_EQ(store.usernames(), std::vector<std::string>{kUser});
}

TEST(Enroll, TooFewSessions) {
    ProfileStore store;
    SeededRandom rng(1);
    try {
        store.enroll(kUser, kPassword, training_sessions(9, 3), fast_options(), rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InsufficientTraining);
        EXPECT_NE(std::string(e.what()).find("insufficient training"), std::string::npos);
    }
    EXPECT_EQ(store.size(), 0u);
}

TEST(Enroll, WrongPasswordSessionIsNamed) {
    auto sessions = training_sessions(12, 3);
    std::mt19937_64 rng(8);
    sessions[7] = simulate_session(legit_typist(), kUser, "not-it", rng);
    ProfileStore store;
    SeededRandom srng(1);
    try {
        store.enroll(kUser, kPassword, sessions, fast_options(), srng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TrainingMismatch);
        EXPECT_NE(std::string(e.what()).find("session 7"), std::string::npos);
    }
}

TEST(Enroll, DuplicateRejected) {
    ProfileStore store;
    SeededRandom rng(1);
    store.enroll(kUser, kPassword, training_sessions(10, 3), fast_options(), rng);
    try {
        store.enroll(kUser, kPassword, training_sessions(10, 4), fast_options(), rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DuplicateUser);
    }
}

TEST(Username, Lookup) {
    const ProfileStore store = trained_store(10);
    EXPECT_TRUE(store.verify_username(kUser));
    EXPECT_FALSE(store.verify_username("mallory"));
    EXPECT_FALSE(store.verify_username(""));
}

TEST(Password, VerifyAndCorrectedTypos) {
    const ProfileStore store = trained_store(10);
    const UserProfile p = *store.get(kUser);
    EXPECT_TRUE(verify_password(p, kPassword));
    EXPECT_FALSE(verify_password(p, "Secr3t!pW"));
    EXPECT_FALSE(verify_password(p, ""));

    TypistModel sloppy = legit_typist();
    sloppy.error_rate = 1.0;
    std::mt19937_64 rng(2);
    const LoginSession s = simulate_session(sloppy, kUser, kPassword, rng);
    EXPECT_TRUE(verify_password(p, reconstruct_text(s, Field::Password)));
}

TEST(Password, SaltedAndNeverStoredPlain) {
    SeededRandom rng(1);
    const PasswordRecord a = hash_password(kPassword, HashParams::minimal(), rng);
    const PasswordRecord b = hash_password(kPassword, HashParams::minimal(), rng);
    EXPECT_NE(a.salt_hex, b.salt_hex);
    EXPECT_NE(a.hash_hex, b.hash_hex);
    EXPECT_EQ(a.salt_hex.size(), 32u);
    EXPECT_EQ(a.hash_hex.size(), 64u);
    const std::string dumped = trained_store(10).to_json().dump();
    EXPECT_EQ(dumped.find(kPassword), std::string::npos);
}

TEST(AppendSuccess, GrowsHistoryAndWidensRanges) {
    ProfileStore store = trained_store(10);
    const UserProfile before = *store.get(kUser);
    FeatureVector fv = before.raw_history.front();
    fv[Feature::SessionTime] = before.ranges.bounds[1].second * 3;
    store.append_success(kUser, fv, before.raw_history.back().timestamp_ms + 1, AttemptResult::Granted);
    const UserProfile after = *store.get(kUser);
    EXPECT_EQ(after.raw_history.size(), 11u);
    EXPECT_EQ(after.ranges.bounds[1].second, fv[Feature::SessionTime]);
    for (const auto& h : after.raw_history) EXPECT_TRUE(after.ranges.covers(h.clustered(false)));

    store.append_success(kUser, before.raw_history[3], 5, AttemptResult::ChallengeVerified);
    const UserProfile again = *store.get(kUser);
    EXPECT_EQ(again.raw_history.size(), 12u);
    for (std::size_t i = 1; i < again.raw_history.size(); ++i)
        EXPECT_LE(again.raw_history[i - 1].timestamp_ms, again.raw_history[i].timestamp_ms);
}

TEST(AppendSuccess, DeniedIsRefused) {
    ProfileStore store = trained_store(10);
    try {
        store.append_success(kUser, store.get(kUser)->raw_history[0], 1, AttemptResult::Denied);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PreconditionFailed);
    }
    EXPECT_EQ(store.get(kUser)->raw_history.size(), 10u);
    EXPECT_THROW(store.append_success("ghost", {}, 1, AttemptResult::Granted), Error);
}

TEST(Persistence, SaveLoadRoundTrip) {
    TempDir dir;
    const auto path = dir.path / "store.json";
    const ProfileStore store = trained_store(12);
    save_store(store, path);
    EXPECT_TRUE(load_store(path) == store);
    EXPECT_EQ(json::parse(read_file(path))["version"], "keydyn-store/1");
}

TEST(Persistence, EmptyAndMissing) {
    TempDir dir;
    EXPECT_EQ(load_store(dir.path / "absent.json").size(), 0u);
    save_store(ProfileStore{}, dir.path / "empty.json");
    EXPECT_EQ(load_store(dir.path / "empty.json").size(), 0u);
}

TEST(Persistence, RandomStoresRoundTrip) {
    TempDir dir;
    std::mt19937_64 rng(77);
    for (int i = 0; i < 100; ++i) {
        const ProfileStore store = random_store(rng);
        const auto path = dir.path / ("s" + std::to_string(i) + ".json");
        save_store(store, path);
        ASSERT_TRUE(load_store(path) == store) << "store " << i;
    }
}

TEST(Persistence, TruncatedFileIsCorrupt) {
    TempDir dir;
    const auto path = dir.path / "store.json";
    save_store(trained_store(10), path);
    const std::string text = read_file(path);
    std::ofstream(path, std::ios::trunc) << text.substr(0, text.size() / 2);
    try {
        load_store(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::CorruptStore);
        EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
    }
}

TEST(Persistence, StructurallyWrongIsCorrupt) {
    TempDir dir;
    const auto path = dir.path / "store.json";
    std::ofstream(path) << R"({"version":"keydyn-store/1","users":{"a":{"username":"a"}}})";
    EXPECT_THROW(load_store(path), Error);
    std::ofstream(path, std::ios::trunc) << "[1,2]";
    try {
        load_store(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::CorruptStore);
    }
}

TEST(Persistence, VersionMismatchNamesBoth) {
    TempDir dir;
    const auto path = dir.path / "store.json";
    std::ofstream(path) << R"({"version":"keydyn-store/9","users":{}})";
    try {
        load_store(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
        const std::string msg = e.what();
        EXPECT_NE(msg.find("keydyn-store/9"), std::string::npos);
        EXPECT_NE(msg.find("keydyn-store/1"), std::string::npos);
    }
}

TEST(Persistence, SaveLeavesNoTemporaryFiles) {
    TempDir dir;
    const auto path = dir.path / "store.json";
    for (int i = 0; i < 3; ++i) save_store(trained_store(10), path);
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path)) ++files;
    EXPECT_EQ(files, 1u);
    EXPECT_THROW(save_store(trained_store(10), dir.path / "no" / "such" / "dir" / "s.json"), Error);
}

TEST(Concurrency, ParallelAppendsAcrossUsers) {
    ProfileStore store = trained_store(10);
    UserProfile other = *store.get(kUser);
    other.username = "bob";
    store.insert(other);
    const FeatureVector fv = other.raw_history[0];
    std::vector<std::thread> threads;
    for (const std::string user : {kUser, std::string("bob")}) {
        for (int t = 0; t < 4; ++t) {
            threads.emplace_back([&store, user, fv, t] {
                for (int i = 0; i < 25; ++i) {
                    std::lock_guard lock(store.user_mutex(user));
                    store.append_success(user, fv, 2'000'000'000'000 + t * 100 + i, AttemptResult::Granted);
                }
            });
        }
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(store.get(kUser)->raw_history.size(), 110u);
    EXPECT_EQ(store.get("bob")->raw_history.size(), 110u);
}
