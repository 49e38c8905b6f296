#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "keydyn/auth_service.hpp"
#include "keydyn/clustering.hpp"
#include "keydyn/harness.hpp"
#include "keydyn/session.hpp"

namespace keydyn::test {

inline KeyEvent down(const std::string& k, double t) { return {k, KeyAction::Down, t}; }
inline KeyEvent up(const std::string& k, double t) { return {k, KeyAction::Up, t}; }

/// Session whose password span covers every event.
inline LoginSession password_only(std::vector<KeyEvent> events, std::string user = "u") {
    LoginSession s;
    s.username_claim = std::move(user);
    s.username_span = {0, -1};
    s.password_span = {0, static_cast<std::ptrdiff_t>(events.size()) - 1};
    s.events = std::move(events);
    return s;
}

/// Down'a'@0, Up'a'@80, Down'b'@150, Up'b'@240.
inline LoginSession ab_session() {
    return password_only({down("a", 0), up("a", 80), down("b", 150), up("b", 240)});
}

/// Minimum WCSS over every assignment of the points to at most k labels,
/// with each cluster represented by its mean.
inline double exhaustive_wcss(const PointSet& pts, std::size_t k) {
    const std::size_t n = pts.size();
    const std::size_t d = pts.dim();
    std::vector<std::size_t> label(n, 0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        std::vector<std::vector<double>> sum(k, std::vector<double>(d, 0.0));
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++cnt[label[i]];
            for (std::size_t j = 0; j < d; ++j) sum[label[i]][j] += pts[i][j];
        }
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = pts[i][j] - sum[label[i]][j] / static_cast<double>(cnt[label[i]]);
                w += diff * diff;
            }
        }
        best = std::min(best, w);
        std::size_t pos = 0;
        while (pos < n && ++label[pos] == k) label[pos++] = 0;
        if (pos == n) break;
    }
    return best;
}

inline PointSet random_points(std::mt19937_64& rng, std::size_t n, std::size_t d) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PointSet p(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) p[i][j] = u(rng);
    return p;
}

/// Two tight rings of history (radius 0.14, centre point included) around
/// (0.25, 0.25) and (0.75, 0.75); the attempt sits `offset` to the right of
/// the first centre.
struct RingScene {
    PointSet history{2};
    std::vector<double> attempt;
};

inline RingScene ring_scene(double offset) {
    RingScene s;
    const double pi = 3.14159265358979323846;
    for (const double c : {0.25, 0.75}) {
        s.history.push_back(std::vector<double>{c, c});
        for (int a = 0; a < 8; ++a) {
            const double th = pi * a / 4.0;
            s.history.push_back(std::vector<double>{c + 0.14 * std::cos(th), c + 0.14 * std::sin(th)});
        }
    }
    s.attempt = {0.25 + offset, 0.25};
    return s;
}

inline const std::string kUser = "alice";
inline const std::string kPassword = "Secr3t!pw";

inline TypistModel legit_typist() {
    TypistModel m;
    m.dwell_mean = 90;
    m.dwell_std = 12;
    m.flight_mean = 140;
    m.flight_std = 25;
    return m;
}

inline std::vector<LoginSession> training_sessions(std::size_t n, std::uint64_t seed,
                                                   const TypistModel& model = legit_typist()) {
    std::mt19937_64 rng(seed);
    std::vector<LoginSession> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(simulate_session(model, kUser, kPassword, rng));
    return out;
}

inline ServiceConfig test_config() {
    ServiceConfig cfg;
    cfg.hash = HashParams::minimal();
    cfg.seed = 11;
    return cfg;
}

/// Store holding one profile for kUser trained on `n` sessions.
inline ProfileStore trained_store(std::size_t n = 20, std::uint64_t seed = 2024) {
    ProfileStore store;
    SeededRandom rng(seed);
    EnrollOptions opts;
    opts.hash = HashParams::minimal();
    opts.seed = profile_seed(test_config().seed, kUser);
    opts.now_ms = 1'700'000'000'000;
    store.enroll(kUser, kPassword, training_sessions(n, seed), opts, rng);
    return store;
}

/// Store with 0..5 users holding arbitrary (but finite) profile contents.
inline ProfileStore random_store(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    const std::vector<std::string> names{"alice", "bob", "Zoë", "o'brien", "a\"quote", "用户", "x y"};
    auto hex = [&](std::size_t bytes) {
        static const char* digits = "0123456789abcdef";
        std::string s;
        for (std::size_t i = 0; i < 2 * bytes; ++i) s += digits[rng() % 16];
        return s;
    };
    ProfileStore store;
    const std::size_t users = rng() % 6;
    for (std::size_t i = 0; i < users; ++i) {
        UserProfile p;
        p.username = names[rng() % names.size()] + std::to_string(i);
        p.password.params = rng() % 2 ? HashParams::minimal() : HashParams::interactive();
        p.password.salt_hex = hex(16);
        p.password.hash_hex = hex(32);
        p.enrolled_context = {rng() % 2 ? "KE" : "", "UTC+" + std::to_string(rng() % 12), hex(4)};
        p.uses_pressure = rng() % 2;
        p.seed = rng();
        p.created_ms = static_cast<std::int64_t>(rng() % 2'000'000'000'000);
        p.updated_ms = p.created_ms + static_cast<std::int64_t>(rng() % 1000);
        const std::size_t n = rng() % 25;
        for (std::size_t j = 0; j < n; ++j) {
            FeatureVector fv;
            for (double& v : fv.core) v = u(rng);
            if (p.uses_pressure) fv.pressure = static_cast<double>(rng() % 1000) / 999.0;
            fv.timestamp_ms = p.created_ms + static_cast<std::int64_t>(j);
            p.raw_history.push_back(fv);
            p.ranges = update_ranges(p.ranges, fv.clustered(p.uses_pressure));
        }
        store.insert(std::move(p));
    }
    return store;
}

/// Time stands still until advance() is called.
struct ManualClock {
    std::shared_ptr<std::int64_t> now = std::make_shared<std::int64_t>(1'800'000'000'000);
    Clock clock() const {
        auto p = now;
        return [p] { return *p; };
    }
    void advance(std::int64_t ms) const { *now += ms; }
};

/// AuthService over an in-memory store with seeded randomness, captured
/// notifications and a manual clock.
struct ServiceFixture {
    SeededRandom rng{99};
    MemoryNotifier notifier;
    ManualClock clock;
    std::unique_ptr<AuthService> service;

    explicit ServiceFixture(ProfileStore store, ServiceConfig cfg = test_config()) {
        service = std::make_unique<AuthService>(std::move(cfg), std::move(store), rng, &notifier, clock.clock());
    }
    AuthService* operator->() { return service.get(); }
};

inline nlohmann::json attempt_doc(const TypistModel& m, std::uint64_t seed, const std::string& password = kPassword,
                                  const std::string& user = kUser) {
    std::mt19937_64 rng(seed);
    return session_to_json(simulate_session(m, user, password, rng));
}

/// Deterministic search for an attempt on `store` that the service rates
/// with `degree` ("normal", "first_degree" or "second_degree").
inline nlohmann::json find_attempt(const ProfileStore& store, const std::string& degree) {
    for (int step = 0; step < 40; ++step) {
        TypistModel m = legit_typist();
        m.dwell_mean += 2.0 * step;
        m.flight_mean += 4.0 * step;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            nlohmann::json doc = attempt_doc(m, 1000 + seed);
            ServiceFixture fx(store);
            const Response r = fx->login_attempt(doc);
            if (r.body.contains("risk") && r.body["risk"]["degree"] == degree) return doc;
        }
    }
    throw std::runtime_error("no attempt with degree " + degree);
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("keydyn-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace keydyn::test
