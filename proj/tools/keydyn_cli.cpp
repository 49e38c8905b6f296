// keydyn: train profiles, generate synthetic typists, replay attack
// scenarios and run the authentication service.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "keydyn/auth_service.hpp"
#include "keydyn/error.hpp"
#include "keydyn/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace keydyn;

namespace {

struct TypistFlags {
    std::string file;
    TypistModel model;
};

TypistModel resolve_typist(const TypistFlags& t, const CLI::App* cmd, const std::string& style) {
    TypistModel m;
    if (!t.file.empty()) {
        std::ifstream in(t.file);
        if (!in) throw Error(ErrorCode::InvalidArgument, "cannot read " + t.file);
        m = typist_from_json(json::parse(in));
    }
    auto take = [&](const char* flag, double& dst, double value) {
        if (cmd->count(flag) > 0) dst = value;
    };
    take("--dwell-mean", m.dwell_mean, t.model.dwell_mean);
    take("--dwell-std", m.dwell_std, t.model.dwell_std);
    take("--flight-mean", m.flight_mean, t.model.flight_mean);
    take("--flight-std", m.flight_std, t.model.flight_std);
    take("--error-rate", m.error_rate, t.model.error_rate);
    if (!style.empty()) m.shift_style = typist_from_json({{"shift_style", style}}).shift_style;
    m.validate();
    return m;
}

struct ConfigFlags {
    std::size_t min_history = 10;
    double radius_factor = 2.0;
    std::string threshold_mode = "radius-factor";
    std::size_t k_cap = 10;
    std::int64_t otp_ttl_ms = 300'000;
    std::uint64_t seed = 0;
    bool fast_hash = false;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& c) {
    cmd->add_option("--min-history", c.min_history, "Minimum training sessions")->envname("KEYDYN_MIN_HISTORY");
    cmd->add_option("--radius-factor", c.radius_factor, "t2 = radius_factor * t1")->envname("KEYDYN_RADIUS_FACTOR");
    cmd->add_option("--threshold-mode", c.threshold_mode, "radius-factor or mean-3sigma")
        ->check(CLI::IsMember({"radius-factor", "mean-3sigma"}))
        ->envname("KEYDYN_THRESHOLD_MODE");
    cmd->add_option("--k-cap", c.k_cap, "Largest k tried by the elbow sweep");
    cmd->add_option("--otp-ttl-ms", c.otp_ttl_ms, "OTP lifetime in ms")->envname("KEYDYN_OTP_TTL_MS");
    cmd->add_option("--seed", c.seed, "Seed for every random choice")->envname("KEYDYN_SEED");
    cmd->add_flag("--fast-hash", c.fast_hash, "Cheapest Argon2id parameters (tests and demos only)");
}

ServiceConfig make_config(const ConfigFlags& c) {
    ServiceConfig cfg;
    cfg.anomaly.min_history = c.min_history;
    cfg.anomaly.radius_factor = c.radius_factor;
    cfg.anomaly.threshold_mode = parse_threshold_mode(c.threshold_mode);
    cfg.anomaly.k_cap = c.k_cap;
    cfg.mfa.otp_ttl_ms = c.otp_ttl_ms;
    cfg.seed = c.seed;
    cfg.hash = c.fast_hash ? HashParams::minimal() : HashParams::interactive();
    return cfg;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidArgument, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    json doc = json::parse(ss.str(), nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorCode::MalformedDocument, path.string() + ": not valid JSON");
    return doc;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + path.string());
    out << text;
}

void print_elbow(const ElbowReport& e) {
    std::cout << "elbow k=" << e.chosen_k << " (k range " << e.k_min << ".." << e.k_max << ")\n";
    for (const auto& p : e.curve) {
        std::cout << "  k=" << p.k << " wcss=" << p.wcss;
        if (p.second_difference) std::cout << " d2=" << *p.second_difference;
        std::cout << '\n';
    }
}

// ---------------------------------------------------------------------------

struct GenArgs {
    TypistFlags typist;
    std::string shift_style;
    std::string user, password, out_dir = "sessions", prefix = "session", scenario, truth = "legit",
                behavior = "pass", geo;
    std::size_t count = 1;
    std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a, const CLI::App* cmd) {
    const TypistModel model = resolve_typist(a.typist, cmd, a.shift_style);
    std::mt19937_64 rng(a.seed);
    LoginContext ctx;
    ctx.geo = a.geo;
    fs::create_directories(a.out_dir);
    std::vector<fs::path> written;
    for (std::size_t i = 0; i < a.count; ++i) {
        const LoginSession s = simulate_session(model, a.user, a.password, rng, ctx);
        char name[64];
        std::snprintf(name, sizeof name, "%s_%03zu.json", a.prefix.c_str(), i);
        const fs::path p = fs::path(a.out_dir) / name;
        write_text(p, session_to_json(s).dump(2) + "\n");
        written.push_back(p);
    }
    if (!a.scenario.empty()) {
        const fs::path scen(a.scenario);
        json doc = fs::exists(scen) ? read_json_file(scen) : json::array();
        const fs::path base = scen.has_parent_path() ? scen.parent_path() : fs::path(".");
        for (const auto& p : written) {
            doc.push_back({{"session_file", fs::relative(p, base).generic_string()},
                           {"truth", a.truth},
                           {"challenge_behavior", a.behavior}});
        }
        parse_scenario(doc, base);
        write_text(scen, doc.dump(2) + "\n");
    }
    std::cout << "wrote " << written.size() << " session(s) to " << a.out_dir << '\n';
    return 0;
}

struct TrainArgs {
    TypistFlags typist;
    std::string shift_style;
    ConfigFlags config;
    std::string store, user, password, geo;
    std::vector<std::string> sessions;
    std::size_t count = 20;
};

int cmd_train(const TrainArgs& a, const CLI::App* cmd) {
    std::vector<LoginSession> training;
    if (!a.sessions.empty()) {
        for (const auto& f : a.sessions) training.push_back(session_from_json(read_json_file(f)));
    } else {
        const TypistModel model = resolve_typist(a.typist, cmd, a.shift_style);
        std::mt19937_64 rng(a.config.seed);
        LoginContext ctx;
        ctx.geo = a.geo;
        for (std::size_t i = 0; i < a.count; ++i) training.push_back(simulate_session(model, a.user, a.password, rng, ctx));
    }
    const ServiceConfig cfg = make_config(a.config);
    ProfileStore store = load_store(a.store);
    EnrollOptions opts;
    opts.min_history = cfg.anomaly.min_history;
    opts.hash = cfg.hash;
    opts.seed = profile_seed(cfg.seed, a.user);
    opts.now_ms = system_now_ms();
    SystemRandom salt_rng;
    const UserProfile& p = store.enroll(a.user, a.password, training, opts, salt_rng);
    save_store(store, a.store);
    std::cout << "trained " << a.user << " from " << p.raw_history.size() << " sessions\n";
    print_elbow(export_clusters(p, cfg.anomaly).elbow);
    return 0;
}

struct ReplayArgs {
    ConfigFlags config;
    std::string store, scenario, via, outbox = "outbox.log", log;
};

int cmd_replay(const ReplayArgs& a) {
    const fs::path scen(a.scenario);
    const auto attempts = parse_scenario(read_json_file(scen), scen.has_parent_path() ? scen.parent_path() : ".");
    std::optional<ProfileStore> store;
    if (!a.store.empty()) {
        if (!fs::exists(a.store)) throw Error(ErrorCode::StorageFailure, "store not found: " + a.store);
        store = load_store(a.store);
        for (std::size_t i = 0; i < attempts.size(); ++i) {
            const std::string user = attempts[i].session.value("username_claim", std::string());
            if (!store->verify_username(user))
                throw Error(ErrorCode::UnknownUser, "scenario entry " + std::to_string(i) + ": unknown user '" + user + "'");
        }
    }

    ReplayResult result;
    if (!a.via.empty()) {
        HttpBackend backend(a.via, a.outbox);
        result = replay(backend, attempts);
    } else {
        if (!store) throw Error(ErrorCode::InvalidArgument, "--store is required unless --via is given");
        InProcessBackend backend(make_config(a.config), *store, a.config.seed);
        result = replay(backend, attempts);
    }

    if (!a.log.empty()) {
        std::string lines;
        for (const auto& entry : result.log) lines += to_json(entry).dump() + "\n";
        write_text(a.log, lines);
    }
    for (const auto& entry : result.log) {
        if (entry.truth == Truth::Legit && !entry.granted)
            std::cerr << "legit attempt " << entry.index << " denied (degree " << entry.degree.value_or("n/a") << ")\n";
    }
    std::cout << to_json(result.metrics).dump(2) << '\n';
    return 0;
}

struct ExportArgs {
    ConfigFlags config;
    std::string store, user, out_dir = ".", attempt, x = "session_time", y = "typing_rate";
};

int cmd_export(const ExportArgs& a) {
    const ProfileStore store = load_store(a.store);
    const auto profile = store.get(a.user);
    if (!profile) throw Error(ErrorCode::UnknownUser, "unknown user '" + a.user + "'");
    std::optional<FeatureVector> attempt;
    if (!a.attempt.empty()) {
        const LoginSession s = session_from_json(read_json_file(a.attempt));
        attempt = extract_features(s, profile->enrolled_context);
    }
    const ClusterExport ex = export_clusters(*profile, make_config(a.config).anomaly, attempt);

    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < ex.dimensions.size(); ++i)
            if (ex.dimensions[i] == name) return i;
        throw Error(ErrorCode::InvalidArgument, "unknown feature '" + name + "'");
    };
    const std::size_t xi = column(a.x), yi = column(a.y);

    std::ostringstream elbow;
    elbow.precision(17);
    elbow << "k,wcss\n";
    for (const auto& p : ex.elbow.curve) elbow << p.k << ',' << p.wcss << '\n';

    std::ostringstream scatter;
    scatter.precision(17);
    scatter << "x,y,kind\n";
    for (std::size_t i = 0; i < ex.history.size(); ++i)
        scatter << ex.history[i][xi] << ',' << ex.history[i][yi] << ",history\n";
    for (std::size_t i = 0; i < ex.centroids.size(); ++i)
        scatter << ex.centroids[i][xi] << ',' << ex.centroids[i][yi] << ",centroid\n";
    if (ex.attempt) scatter << (*ex.attempt)[xi] << ',' << (*ex.attempt)[yi] << ",attempt\n";

    const fs::path dir(a.out_dir);
    write_text(dir / "elbow.csv", elbow.str());
    write_text(dir / "scatter.csv", scatter.str());
    std::cout << "wrote " << (dir / "elbow.csv").string() << " and " << (dir / "scatter.csv").string() << " (k="
              << ex.centroids.size() << ")\n";
    return 0;
}

struct ServeArgs {
    ConfigFlags config;
    std::string store = "store.json", host = "127.0.0.1", outbox = "outbox.log", base_url;
    int port = 8807;
};

HttpServer* g_server = nullptr;

extern "C" void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const ServeArgs& a) {
    ServiceConfig cfg = make_config(a.config);
    cfg.host = a.host;
    cfg.port = a.port;
    cfg.store_path = a.store;
    cfg.outbox_path = a.outbox;
    ProfileStore store = load_store(cfg.store_path);

    SystemRandom system_rng;
    SeededRandom seeded_rng(cfg.seed);
    RandomSource& rng = a.config.seed != 0 ? static_cast<RandomSource&>(seeded_rng) : system_rng;
    OutboxNotifier notifier(cfg.outbox_path);

    cfg.mfa.oob_base_url = a.base_url.empty() ? "http://" + cfg.host + ":" + std::to_string(cfg.port) : a.base_url;
    AuthService service(cfg, std::move(store), rng, &notifier);
    HttpServer http(service);
    HttpServer* server = &http;
    const int bound = server->bind(cfg.host, cfg.port);
    if (bound < 0) {
        std::cerr << "keydyn: cannot bind " << cfg.host << ":" << cfg.port << '\n';
        return 1;
    }
    g_server = server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on http://" << cfg.host << ":" << bound << " (store " << cfg.store_path.string()
              << ", outbox " << cfg.outbox_path.string() << ")" << std::endl;
    server->listen_after_bind();
    g_server = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Keystroke-dynamics risk-based authentication toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Write synthetic session files");
    g->add_option("--user", gen.user, "Username to type")->required();
    g->add_option("--password", gen.password, "Password to type")->required();
    g->add_option("--count,-n", gen.count, "Number of sessions");
    g->add_option("--out-dir,-o", gen.out_dir, "Output directory");
    g->add_option("--prefix", gen.prefix, "File name prefix");
    g->add_option("--geo", gen.geo, "Geo tag recorded in the context");
    g->add_option("--seed", gen.seed, "RNG seed")->envname("KEYDYN_SEED");
    g->add_option("--scenario", gen.scenario, "Append the sessions to this scenario file");
    g->add_option("--truth", gen.truth, "Label for scenario entries")->check(CLI::IsMember({"legit", "imposter"}));
    g->add_option("--challenge-behavior", gen.behavior, "Whether the subject can answer challenges")
        ->check(CLI::IsMember({"pass", "fail"}));

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Enroll a user from session files or a synthetic typist");
    t->add_option("--store", train.store, "Profile store file")->required()->envname("KEYDYN_STORE");
    t->add_option("--user", train.user, "Username")->required();
    t->add_option("--password", train.password, "Password")->required();
    t->add_option("--sessions", train.sessions, "Training session files (otherwise synthetic)");
    t->add_option("--count,-n", train.count, "Synthetic training sessions");
    t->add_option("--geo", train.geo, "Geo tag for synthetic sessions");
    add_config_flags(t, train.config);

    ReplayArgs rep;
    auto* r = app.add_subcommand("replay", "Replay a labeled scenario and report FPR/FNR/GAR");
    r->add_option("--store", rep.store, "Profile store file")->envname("KEYDYN_STORE");
    r->add_option("--scenario", rep.scenario, "Scenario JSON file")->required();
    r->add_option("--via", rep.via, "Base URL of a running service (default: in-process)");
    r->add_option("--outbox", rep.outbox, "Outbox log of that service");
    r->add_option("--log", rep.log, "Write the per-attempt log as JSON lines");
    add_config_flags(r, rep.config);

    ExportArgs exp;
    auto* e = app.add_subcommand("export", "Write elbow.csv and scatter.csv for a user");
    e->add_option("--store", exp.store, "Profile store file")->required()->envname("KEYDYN_STORE");
    e->add_option("--user", exp.user, "Username")->required();
    e->add_option("--out-dir,-o", exp.out_dir, "Output directory");
    e->add_option("--attempt", exp.attempt, "Session file plotted as an extra attempt point");
    e->add_option("--x", exp.x, "Feature on the x axis");
    e->add_option("--y", exp.y, "Feature on the y axis");
    add_config_flags(e, exp.config);

    ServeArgs srv;
    auto* s = app.add_subcommand("serve", "Run the HTTP authentication service");
    s->add_option("--store", srv.store, "Profile store file")->envname("KEYDYN_STORE");
    s->add_option("--host", srv.host, "Bind address")->envname("KEYDYN_HOST");
    s->add_option("--port", srv.port, "Port (0 picks a free one)")->envname("KEYDYN_PORT");
    s->add_option("--outbox", srv.outbox, "Notification outbox log")->envname("KEYDYN_OUTBOX");
    s->add_option("--base-url", srv.base_url, "Public base URL used in OOB links");
    add_config_flags(s, srv.config);

    for (auto [cmd, typist, style] : {std::tuple{g, &gen.typist, &gen.shift_style},
                                      std::tuple{t, &train.typist, &train.shift_style}}) {
        cmd->add_option("--typist", typist->file, "Typist model JSON file (flags override it)");
        cmd->add_option("--dwell-mean", typist->model.dwell_mean, "Mean dwell time in ms");
        cmd->add_option("--dwell-std", typist->model.dwell_std, "Dwell standard deviation in ms");
        cmd->add_option("--flight-mean", typist->model.flight_mean, "Mean flight time in ms");
        cmd->add_option("--flight-std", typist->model.flight_std, "Flight standard deviation in ms");
        cmd->add_option("--error-rate", typist->model.error_rate, "Per-character typo probability");
        cmd->add_option("--shift-style", *style, "shift or capslock")->check(CLI::IsMember({"shift", "capslock"}));
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (g->parsed()) return cmd_gen(gen, g);
        if (t->parsed()) return cmd_train(train, t);
        if (r->parsed()) return cmd_replay(rep);
        if (e->parsed()) return cmd_export(exp);
        if (s->parsed()) return cmd_serve(srv);
    } catch (const Error& err) {
        std::cerr << "keydyn: " << to_string(err.code()) << ": " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "keydyn: " << err.what() << '\n';
        return 2;
    }
    return 0;
}
