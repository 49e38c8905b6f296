#include <gtest/gtest.h>

#include <httplib.h>

#include "keydyn/auth_service.hpp"
#include "keydyn/error.hpp"
#include "support.hpp"

using namespace keydyn;
using namespace keydyn::test;
using nlohmann::json;

namespace {

TypistModel far_typist() {
    TypistModel m = legit_typist();
    m.dwell_mean = 400;
    m.flight_mean = 900;
    return m;
}

json enroll_body(const std::string& user, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    json sessions = json::array();
    for (std::size_t i = 0; i < n; ++i)
        sessions.push_back(session_to_json(simulate_session(legit_typist(), user, kPassword, rng)));
    return {{"username", user}, {"password", kPassword}, {"sessions", sessions}};
}

class Service : public ::testing::Test {
protected:
    static const ProfileStore& store() {
        static const ProfileStore s = trained_store(20);
        return s;
    }
    static const json& first_degree_doc() {
        static const json d = find_attempt(store(), "first_degree");
        return d;
    }
    static const json& normal_doc() {
        static const json d = session_to_json(training_sessions(20, 2024)[4]);
        return d;
    }
};

}  // namespace

TEST_F(Service, UsernameStep) {
    ServiceFixture fx(store());
    EXPECT_EQ(fx->username_step({{"username", kUser}}).body, json({{"exists", true}}));
    const Response r = fx->username_step({{"username", "mallory"}});
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["exists"], false);
    EXPECT_EQ(fx->username_step(json::object()).status, 400);
    EXPECT_EQ(fx->username_step({{"username", 3}}).status, 400);
}

TEST_F(Service, RepeatOfTrainingSessionIsGrantedAndLearned) {
    ServiceFixture fx(store());
    const Response r = fx->login_attempt(normal_doc());
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["outcome"], "granted");
    EXPECT_EQ(r.body["risk"]["degree"], "normal");
    EXPECT_FALSE(r.body["risk"].contains("explain"));
    EXPECT_EQ(fx->store().get(kUser)->raw_history.size(), 21u);
    EXPECT_TRUE(fx->login_attempt(normal_doc(), true).body["risk"].contains("explain"));
}

TEST_F(Service, FarFieldImposterGetsOob) {
    ServiceFixture fx(store());
    const Response r = fx->login_attempt(attempt_doc(far_typist(), 5));
    EXPECT_EQ(r.status, 202);
    EXPECT_EQ(r.body["outcome"], "challenge");
    EXPECT_EQ(r.body["challenge"]["kind"], "oob");
    EXPECT_EQ(r.body["risk"]["degree"], "second_degree");
    EXPECT_EQ(r.body["risk"]["global_pass"], false);
    EXPECT_TRUE(fx.notifier.payload_for(r.body["challenge"]["id"]));
    EXPECT_EQ(fx->store().get(kUser)->raw_history.size(), 20u);
}

TEST_F(Service, DifferentShiftHabitIsChallenged) {
    ServiceFixture fx(store());
    TypistModel caps = legit_typist();
    caps.shift_style = ShiftStyle::CapsLock;
    const Response r = fx->login_attempt(attempt_doc(caps, 5));
    EXPECT_EQ(r.status, 202);
}

TEST_F(Service, BadCredentialsRevealNothing) {
    ServiceFixture fx(store());
    const Response wrong = fx->login_attempt(attempt_doc(legit_typist(), 1, "wrong-pass"));
    EXPECT_EQ(wrong.status, 403);
    EXPECT_EQ(wrong.body["outcome"], "denied");
    EXPECT_FALSE(wrong.body.contains("risk"));
    const Response unknown = fx->login_attempt(attempt_doc(legit_typist(), 1, kPassword, "mallory"));
    EXPECT_EQ(unknown.status, 403);
    EXPECT_EQ(unknown.body, wrong.body);

    json mismatched = attempt_doc(legit_typist(), 1);
    mismatched["username_claim"] = "bob";
    EXPECT_EQ(fx->login_attempt(mismatched).status, 403);
}

TEST_F(Service, MalformedAttempt) {
    ServiceFixture fx(store());
    json doc = normal_doc();
    doc["events"][0]["t"] = 1e9;
    const Response r = fx->login_attempt(doc);
    EXPECT_EQ(r.status, 400);
    EXPECT_EQ(r.body["error"], "unsorted");
    EXPECT_TRUE(r.body.contains("detail"));
    EXPECT_EQ(fx->login_attempt(json::array()).status, 400);
}

TEST_F(Service, OtpFlow) {
    ServiceFixture fx(store());
    const Response r = fx->login_attempt(first_degree_doc());
    ASSERT_EQ(r.status, 202);
    EXPECT_EQ(r.body["challenge"]["kind"], "otp");
    const std::string id = r.body["challenge"]["id"];
    const std::string code = *fx.notifier.payload_for(id);

    EXPECT_EQ(fx->approve_oob(id, {{"token", code}}).status, 400);
    EXPECT_EQ(fx->verify_otp(id, json::object()).status, 400);
    const Response retry = fx->verify_otp(id, {{"code", code == "000000" ? "111111" : "000000"}});
    EXPECT_EQ(retry.status, 403);
    EXPECT_EQ(retry.body["outcome"], "retry");
    EXPECT_EQ(retry.body["attempts_left"], 2);
    const Response ok = fx->verify_otp(id, {{"code", code}});
    EXPECT_EQ(ok.status, 200);
    EXPECT_EQ(ok.body["outcome"], "granted");
    EXPECT_EQ(fx->store().get(kUser)->raw_history.size(), 21u);
    EXPECT_EQ(fx->verify_otp(id, {{"code", code}}).status, 409);
    EXPECT_EQ(fx->verify_otp("ffff", {{"code", code}}).status, 404);
}

TEST_F(Service, ExpiredOtpIsDenied) {
    ServiceFixture fx(store());
    const Response r = fx->login_attempt(first_degree_doc());
    const std::string id = r.body["challenge"]["id"];
    fx.clock.advance(300'001);
    const Response late = fx->verify_otp(id, {{"code", *fx.notifier.payload_for(id)}});
    EXPECT_EQ(late.status, 403);
    EXPECT_EQ(late.body["reason"], "expired");
    EXPECT_EQ(fx->store().get(kUser)->raw_history.size(), 20u);
}

TEST_F(Service, OobFlow) {
    ServiceFixture fx(store());
    const Response a = fx->login_attempt(attempt_doc(far_typist(), 7));
    const std::string id = a.body["challenge"]["id"];
    const auto token = token_from_oob_payload(*fx.notifier.payload_for(id));
    ASSERT_TRUE(token);
    EXPECT_EQ(fx->verify_otp(id, {{"code", "123456"}}).status, 400);
    const Response ok = fx->approve_oob(id, {{"token", *token}});
    EXPECT_EQ(ok.status, 200);
    EXPECT_EQ(fx->store().get(kUser)->raw_history.size(), 21u);

    const Response b = fx->login_attempt(attempt_doc(far_typist(), 8));
    const Response bad = fx->approve_oob(b.body["challenge"]["id"], {{"token", "00"}});
    EXPECT_EQ(bad.status, 403);
    EXPECT_EQ(bad.body["reason"], "failed");
}

TEST_F(Service, DeliveryFailureIsReported) {
    ServiceFixture fx(store());
    fx.notifier.fail_next = true;
    const Response r = fx->login_attempt(attempt_doc(far_typist(), 7));
    EXPECT_EQ(r.status, 202);
    EXPECT_TRUE(r.body["challenge"].contains("delivery_error"));
}

TEST_F(Service, Enroll) {
    ServiceFixture fx(ProfileStore{});
    const Response ok = fx->enroll(enroll_body("carol", 10, 1));
    EXPECT_EQ(ok.status, 201);
    EXPECT_EQ(ok.body["trained"], 10);
    EXPECT_EQ(fx->enroll(enroll_body("carol", 10, 2)).status, 409);
    EXPECT_EQ(fx->enroll(enroll_body("dave", 9, 2)).status, 422);
    EXPECT_EQ(fx->enroll({{"username", "x"}}).status, 400);

    json mixed = enroll_body("erin", 10, 3);
    std::mt19937_64 rng(1);
    mixed["sessions"][4] = session_to_json(simulate_session(legit_typist(), "erin", "other", rng));
    const Response bad = fx->enroll(mixed);
    EXPECT_EQ(bad.status, 422);
    EXPECT_NE(bad.body["detail"].get<std::string>().find("session 4"), std::string::npos);
    EXPECT_TRUE(fx->username_step({{"username", "carol"}}).body["exists"]);
    EXPECT_FALSE(fx->username_step({{"username", "erin"}}).body["exists"]);
}

TEST_F(Service, ProfileSummaryHasNoSecrets) {
    ServiceFixture fx(store());
    const Response r = fx->profile_summary(kUser);
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["history"], 20);
    const std::string text = r.body.dump();
    const UserProfile p = *store().get(kUser);
    EXPECT_EQ(text.find(p.password.hash_hex), std::string::npos);
    EXPECT_EQ(text.find(p.password.salt_hex), std::string::npos);
    EXPECT_EQ(fx->profile_summary("nobody").status, 404);
}

TEST_F(Service, ClusterExport) {
    ServiceFixture fx(store());
    const Response r = fx->clusters(kUser);
    ASSERT_EQ(r.status, 200);
    const std::size_t k = r.body["k"];
    EXPECT_EQ(r.body["centroids"].size(), k);
    EXPECT_EQ(r.body["points"].size(), 20u);
    EXPECT_EQ(r.body["dimensions"].size(), kCoreFeatureCount);
    for (const auto& row : r.body["points"])
        for (double v : row) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    EXPECT_EQ(fx->clusters("nobody").status, 404);
}

TEST_F(Service, UntrainedProfileFailsClosed) {
    ProfileStore s = store();
    UserProfile thin = *s.get(kUser);
    thin.raw_history.resize(5);
    s.insert(thin);
    ServiceFixture fx(s);
    const Response r = fx->login_attempt(normal_doc());
    EXPECT_EQ(r.status, 409);
    EXPECT_EQ(r.body["error"], "profile_not_trained");
    EXPECT_NE(r.body["outcome"], "granted");
    EXPECT_EQ(fx->clusters(kUser).status, 409);
}

TEST_F(Service, PressureProfileNeedsPressure) {
    ProfileStore s = store();
    UserProfile p = *s.get(kUser);
    p.uses_pressure = true;
    for (auto& fv : p.raw_history) fv.pressure = 0.5;
    p.ranges.bounds.push_back({0.5, 0.5});
    s.insert(p);
    ServiceFixture fx(s);
    EXPECT_EQ(fx->login_attempt(normal_doc()).status, 400);
}

TEST_F(Service, PersistsAndReloadsDeterministically) {
    TempDir dir;
    ServiceConfig cfg = test_config();
    cfg.store_path = dir.path / "store.json";
    save_store(store(), cfg.store_path);
    std::vector<json> attempts{normal_doc(), attempt_doc(legit_typist(), 31), attempt_doc(legit_typist(), 32),
                               attempt_doc(far_typist(), 33)};
    std::vector<json> first, second;
    {
        ServiceFixture fx(load_store(cfg.store_path), cfg);
        for (const auto& a : attempts) first.push_back(fx->login_attempt(a).body["risk"]);
    }
    const ProfileStore after = load_store(cfg.store_path);
    EXPECT_GT(after.get(kUser)->raw_history.size(), 20u);
    save_store(store(), cfg.store_path);
    {
        ServiceFixture fx(load_store(cfg.store_path), cfg);
        for (const auto& a : attempts) second.push_back(fx->login_attempt(a).body["risk"]);
    }
    EXPECT_EQ(first, second);
}

TEST_F(Service, StorageFailureDoesNotChangeDecision) {
    TempDir dir;
    ServiceConfig cfg = test_config();
    cfg.store_path = dir.path / "gone" / "store.json";
    ServiceFixture fx(store(), cfg);
    const Response r = fx->login_attempt(normal_doc());
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["outcome"], "granted");
}

TEST_F(Service, HttpEndpoints) {
    TempDir dir;
    ServiceConfig cfg = test_config();
    SeededRandom rng(3);
    OutboxNotifier outbox(dir.path / "outbox.log");
    AuthService svc(cfg, store(), rng, &outbox);
    HttpServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    server.start();
    httplib::Client cli("127.0.0.1", port);

    auto post = [&](const std::string& path, const std::string& body) {
        auto res = cli.Post(path, body, "application/json");
        EXPECT_TRUE(res);
        return std::make_pair(res->status, json::parse(res->body));
    };
    auto [s1, b1] = post("/v1/login/username", json({{"username", kUser}}).dump());
    EXPECT_EQ(s1, 200);
    EXPECT_EQ(b1["exists"], true);

    auto [s2, b2] = post("/v1/login/username", "{oops");
    EXPECT_EQ(s2, 400);
    EXPECT_EQ(b2["error"], "malformed_request");

    auto [s3, b3] = post("/v1/login/attempt?explain=true", normal_doc().dump());
    EXPECT_EQ(s3, 200);
    EXPECT_TRUE(b3["risk"].contains("explain"));

    auto [s4, b4] = post("/v1/login/attempt", attempt_doc(far_typist(), 3).dump());
    ASSERT_EQ(s4, 202);
    const std::string id = b4["challenge"]["id"];
    const auto entries = read_outbox(dir.path / "outbox.log");
    ASSERT_EQ(entries.size(), 1u);
    EXPECT_EQ(entries[0].kind, "oob");
    EXPECT_EQ(entries[0].user, kUser);
    const std::string token = *token_from_oob_payload(entries[0].payload);
    auto link = cli.Get("/v1/challenge/" + id + "/oob?token=" + token);
    ASSERT_TRUE(link);
    EXPECT_EQ(link->status, 200);
    EXPECT_EQ(link->get_header_value("Access-Control-Allow-Origin"), "*");

    auto [s5, b5] = post("/v1/challenge/" + id + "/oob", json({{"token", token}}).dump());
    EXPECT_EQ(s5, 409);
    auto [s6, b6] = post("/v1/challenge/abcd/otp", json({{"code", "123456"}}).dump());
    EXPECT_EQ(s6, 404);

    auto [s7, b7] = post("/v1/enroll", enroll_body("zed", 10, 4).dump());
    EXPECT_EQ(s7, 201);
    auto prof = cli.Get("/v1/admin/users/zed/profile");
    ASSERT_TRUE(prof);
    EXPECT_EQ(prof->status, 200);
    auto clusters = cli.Get("/v1/admin/users/" + kUser + "/clusters");
    ASSERT_TRUE(clusters);
    EXPECT_EQ(clusters->status, 200);
    EXPECT_EQ(json::parse(clusters->body)["points"].size(), 22u);
    auto missing = cli.Get("/v1/admin/users/nobody/clusters");
    EXPECT_EQ(missing->status, 404);
    auto preflight = cli.Options("/v1/login/attempt");
    ASSERT_TRUE(preflight);
    EXPECT_EQ(preflight->status, 204);
    server.stop();
}
