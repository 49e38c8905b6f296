#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "keydyn/anomaly.hpp"

namespace keydyn {

enum class DecisionKind { Grant, ChallengeOtp, ChallengeOob, Deny };

std::string_view to_string(DecisionKind k) noexcept;

struct AuthDecision {
    DecisionKind kind = DecisionKind::Deny;
    std::optional<std::string> challenge_id;
};

/// Normal grants, first degree asks for an OTP, second degree for out-of-band.
DecisionKind decide(OutlierDegree degree) noexcept;
inline DecisionKind decide(const RiskAssessment& a) noexcept { return decide(a.degree); }

// ---------------------------------------------------------------------------
// Randomness

class RandomSource {
public:
    virtual ~RandomSource() = default;
    virtual std::uint64_t next() = 0;

    /// Uniform in [0, bound) by rejection sampling.
    std::uint64_t below(std::uint64_t bound);
    std::string hex(std::size_t bytes);
};

class SeededRandom final : public RandomSource {
public:
    explicit SeededRandom(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next() override { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// Serializes access to a shared source.
class LockedRandom final : public RandomSource {
public:
    explicit LockedRandom(RandomSource& inner) : inner_(inner) {}
    std::uint64_t next() override {
        std::lock_guard lock(mutex_);
        return inner_.next();
    }

private:
    RandomSource& inner_;
    std::mutex mutex_;
};

/// Backed by the operating system CSPRNG.
class SystemRandom final : public RandomSource {
public:
    std::uint64_t next() override;
};

// ---------------------------------------------------------------------------
// Challenges

enum class ChallengeKind { Otp, Oob };
enum class ChallengeState { Pending, Verified, Failed, Expired };

std::string_view to_string(ChallengeKind k) noexcept;
std::string_view to_string(ChallengeState s) noexcept;

struct Challenge {
    std::string id;
    ChallengeKind kind = ChallengeKind::Otp;
    std::string user;
    std::string secret;  // 6-digit code or 128-bit hex approval token
    std::int64_t issued_at = 0;
    std::int64_t expires_at = 0;
    int attempts_left = 0;
    ChallengeState state = ChallengeState::Pending;
    bool delivery_error = false;
    std::string delivery_detail;

    bool terminal() const noexcept { return state != ChallengeState::Pending; }
};

enum class VerifyOutcome { Verified, Retry, Failed, Expired };

std::string_view to_string(VerifyOutcome o) noexcept;

struct MfaConfig {
    std::int64_t otp_ttl_ms = 300'000;
    int otp_attempts = 3;
    std::int64_t oob_ttl_ms = 300'000;
    std::string oob_base_url = "http://127.0.0.1:8807";
};

/// Side channel that carries the secret to the user's second device.
class Notifier {
public:
    virtual ~Notifier() = default;
    /// Throws on delivery failure.
    virtual void deliver(const Challenge& challenge, std::string_view payload, std::int64_t now) = 0;
};

/// Append-only log, one line per delivery: "ts kind user payload".
class OutboxNotifier final : public Notifier {
public:
    explicit OutboxNotifier(std::filesystem::path path) : path_(std::move(path)) {}
    void deliver(const Challenge& challenge, std::string_view payload, std::int64_t now) override;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    std::mutex mutex_;
};

/// Keeps deliveries in memory, keyed by challenge id.
class MemoryNotifier final : public Notifier {
public:
    void deliver(const Challenge& challenge, std::string_view payload, std::int64_t now) override;
    std::optional<std::string> payload_for(const std::string& challenge_id) const;
    bool fail_next = false;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::string> payloads_;
};

struct OutboxEntry {
    std::int64_t ts = 0;
    std::string kind;
    std::string user;
    std::string payload;
};

std::vector<OutboxEntry> read_outbox(const std::filesystem::path& path);

/// Extracts the approval token from an OOB payload URL.
std::optional<std::string> token_from_oob_payload(std::string_view payload);

Challenge issue_otp(const std::string& user, std::int64_t now, RandomSource& rng, const MfaConfig& config = {},
                    Notifier* notifier = nullptr);
VerifyOutcome verify_otp(Challenge& challenge, std::string_view code, std::int64_t now);

Challenge issue_oob(const std::string& user, std::int64_t now, RandomSource& rng, const MfaConfig& config = {},
                    Notifier* notifier = nullptr);
VerifyOutcome approve_oob(Challenge& challenge, std::string_view token, std::int64_t now);

/// Shared challenge table. Each transition is an atomic test-and-set under
/// the registry lock.
class ChallengeRegistry {
public:
    ChallengeRegistry(MfaConfig config, RandomSource& rng, Notifier* notifier)
        : config_(std::move(config)), rng_(rng), notifier_(notifier) {}

    Challenge issue(ChallengeKind kind, const std::string& user, std::int64_t now);
    std::optional<Challenge> find(const std::string& id) const;

    /// Throws UnknownChallenge / ChallengeClosed.
    std::pair<VerifyOutcome, Challenge> verify_otp(const std::string& id, std::string_view code, std::int64_t now);
    std::pair<VerifyOutcome, Challenge> approve_oob(const std::string& id, std::string_view token, std::int64_t now);

    const MfaConfig& config() const noexcept { return config_; }

private:
    Challenge& lookup(const std::string& id);

    MfaConfig config_;
    RandomSource& rng_;
    Notifier* notifier_;
    mutable std::mutex mutex_;
    std::map<std::string, Challenge> challenges_;
};

}  // namespace keydyn
