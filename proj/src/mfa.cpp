#include "keydyn/mfa.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <sodium.h>

#include "keydyn/error.hpp"

namespace keydyn {

namespace {

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}

bool constant_time_equal(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    ensure_sodium();
    return sodium_memcmp(a.data(), b.data(), a.size()) == 0;
}

void require_open(const Challenge& c) {
    if (c.terminal()) {
        throw Error(ErrorCode::ChallengeClosed,
                    "challenge closed: " + c.id + " is " + std::string(to_string(c.state)));
    }
}

void deliver(Challenge& c, Notifier* notifier, std::string_view payload, std::int64_t now) {
    if (notifier == nullptr) return;
    try {
        notifier->deliver(c, payload, now);
    } catch (const std::exception& e) {
        c.delivery_error = true;
        c.delivery_detail = e.what();
    }
}

Challenge make_challenge(ChallengeKind kind, const std::string& user, std::int64_t now, std::int64_t ttl,
                         RandomSource& rng) {
    Challenge c;
    c.id = rng.hex(16);
    c.kind = kind;
    c.user = user;
    c.issued_at = now;
    c.expires_at = now + ttl;
    c.state = ChallengeState::Pending;
    return c;
}

}  // namespace

std::string_view to_string(DecisionKind k) noexcept {
    switch (k) {
        case DecisionKind::Grant: return "grant";
        case DecisionKind::ChallengeOtp: return "otp";
        case DecisionKind::ChallengeOob: return "oob";
        case DecisionKind::Deny: return "deny";
    }
    return "?";
}

std::string_view to_string(ChallengeKind k) noexcept { return k == ChallengeKind::Otp ? "otp" : "oob"; }

std::string_view to_string(ChallengeState s) noexcept {
    switch (s) {
        case ChallengeState::Pending: return "pending";
        case ChallengeState::Verified: return "verified";
        case ChallengeState::Failed: return "failed";
        case ChallengeState::Expired: return "expired";
    }
    return "?";
}

std::string_view to_string(VerifyOutcome o) noexcept {
    switch (o) {
        case VerifyOutcome::Verified: return "verified";
        case VerifyOutcome::Retry: return "retry";
        case VerifyOutcome::Failed: return "failed";
        case VerifyOutcome::Expired: return "expired";
    }
    return "?";
}

DecisionKind decide(OutlierDegree degree) noexcept {
    switch (degree) {
        case OutlierDegree::Normal: return DecisionKind::Grant;
        case OutlierDegree::FirstDegree: return DecisionKind::ChallengeOtp;
        case OutlierDegree::SecondDegree: return DecisionKind::ChallengeOob;
    }
    return DecisionKind::ChallengeOob;
}

std::uint64_t RandomSource::below(std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    for (;;) {
        const std::uint64_t v = next();
        if (v < limit) return v % bound;
    }
}

std::string RandomSource::hex(std::size_t bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes * 2);
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < bytes; ++i) {
        if (i % 8 == 0) word = next();
        const auto byte = static_cast<unsigned>(word & 0xFF);
        word >>= 8;
        out.push_back(kDigits[byte >> 4]);
        out.push_back(kDigits[byte & 0xF]);
    }
    return out;
}

std::uint64_t SystemRandom::next() {
    ensure_sodium();
    std::uint64_t v = 0;
    randombytes_buf(&v, sizeof v);
    return v;
}

void OutboxNotifier::deliver(const Challenge& challenge, std::string_view payload, std::int64_t now) {
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("outbox unavailable: " + path_.string());
    out << now << ' ' << to_string(challenge.kind) << ' ' << challenge.user << ' ' << payload << '\n';
    out.flush();
    if (!out) throw std::runtime_error("outbox write failed: " + path_.string());
}

void MemoryNotifier::deliver(const Challenge& challenge, std::string_view payload, std::int64_t) {
    std::lock_guard lock(mutex_);
    if (fail_next) {
        fail_next = false;
        throw std::runtime_error("notifier unavailable");
    }
    payloads_[challenge.id] = std::string(payload);
}

std::optional<std::string> MemoryNotifier::payload_for(const std::string& challenge_id) const {
    std::lock_guard lock(mutex_);
    auto it = payloads_.find(challenge_id);
    if (it == payloads_.end()) return std::nullopt;
    return it->second;
}

std::vector<OutboxEntry> read_outbox(const std::filesystem::path& path) {
    std::vector<OutboxEntry> entries;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        OutboxEntry e;
        if (ls >> e.ts >> e.kind >> e.user >> e.payload) entries.push_back(std::move(e));
    }
    return entries;
}

std::optional<std::string> token_from_oob_payload(std::string_view payload) {
    constexpr std::string_view kKey = "token=";
    const auto pos = payload.find(kKey);
    if (pos == std::string_view::npos) return std::nullopt;
    auto rest = payload.substr(pos + kKey.size());
    return std::string(rest.substr(0, rest.find('&')));
}

Challenge issue_otp(const std::string& user, std::int64_t now, RandomSource& rng, const MfaConfig& config,
                    Notifier* notifier) {
    Challenge c = make_challenge(ChallengeKind::Otp, user, now, config.otp_ttl_ms, rng);
    char code[8];
    std::snprintf(code, sizeof code, "%06llu", static_cast<unsigned long long>(rng.below(1'000'000)));
    c.secret = code;
    c.attempts_left = config.otp_attempts;
    deliver(c, notifier, c.secret, now);
    return c;
}

VerifyOutcome verify_otp(Challenge& challenge, std::string_view code, std::int64_t now) {
    if (challenge.kind != ChallengeKind::Otp) {
        throw Error(ErrorCode::InvalidArgument, "challenge " + challenge.id + " is not an OTP challenge");
    }
    require_open(challenge);
    if (now > challenge.expires_at) {
        challenge.state = ChallengeState::Expired;
        return VerifyOutcome::Expired;
    }
    if (constant_time_equal(code, challenge.secret)) {
        challenge.state = ChallengeState::Verified;
        return VerifyOutcome::Verified;
    }
    if (--challenge.attempts_left <= 0) {
        challenge.attempts_left = 0;
        challenge.state = ChallengeState::Failed;
        return VerifyOutcome::Failed;
    }
    return VerifyOutcome::Retry;
}

Challenge issue_oob(const std::string& user, std::int64_t now, RandomSource& rng, const MfaConfig& config,
                    Notifier* notifier) {
    Challenge c = make_challenge(ChallengeKind::Oob, user, now, config.oob_ttl_ms, rng);
    c.secret = rng.hex(16);
    c.attempts_left = 1;
    deliver(c, notifier, config.oob_base_url + "/v1/challenge/" + c.id + "/oob?token=" + c.secret, now);
    return c;
}

VerifyOutcome approve_oob(Challenge& challenge, std::string_view token, std::int64_t now) {
    if (challenge.kind != ChallengeKind::Oob) {
        throw Error(ErrorCode::InvalidArgument, "challenge " + challenge.id + " is not an out-of-band challenge");
    }
    require_open(challenge);
    if (now > challenge.expires_at) {
        challenge.state = ChallengeState::Expired;
        return VerifyOutcome::Expired;
    }
    challenge.attempts_left = 0;
    if (constant_time_equal(token, challenge.secret)) {
        challenge.state = ChallengeState::Verified;
        return VerifyOutcome::Verified;
    }
    challenge.state = ChallengeState::Failed;
    return VerifyOutcome::Failed;
}

Challenge ChallengeRegistry::issue(ChallengeKind kind, const std::string& user, std::int64_t now) {
    std::lock_guard lock(mutex_);
    Challenge c = kind == ChallengeKind::Otp ? issue_otp(user, now, rng_, config_, notifier_)
                                             : issue_oob(user, now, rng_, config_, notifier_);
    challenges_[c.id] = c;
    return c;
}

std::optional<Challenge> ChallengeRegistry::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = challenges_.find(id);
    if (it == challenges_.end()) return std::nullopt;
    return it->second;
}

Challenge& ChallengeRegistry::lookup(const std::string& id) {
    auto it = challenges_.find(id);
    if (it == challenges_.end()) throw Error(ErrorCode::UnknownChallenge, "unknown challenge " + id);
    return it->second;
}

std::pair<VerifyOutcome, Challenge> ChallengeRegistry::verify_otp(const std::string& id, std::string_view code,
                                                                  std::int64_t now) {
    std::lock_guard lock(mutex_);
    Challenge& c = lookup(id);
    const VerifyOutcome o = keydyn::verify_otp(c, code, now);
    return {o, c};
}

std::pair<VerifyOutcome, Challenge> ChallengeRegistry::approve_oob(const std::string& id, std::string_view token,
                                                                   std::int64_t now) {
    std::lock_guard lock(mutex_);
    Challenge& c = lookup(id);
    const VerifyOutcome o = keydyn::approve_oob(c, token, now);
    return {o, c};
}

}  // namespace keydyn
