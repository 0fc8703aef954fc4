#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <json.hpp>

#include "telemloss/error.hpp"
#include "telemloss/event_model.hpp"
#include "telemloss/simulation.hpp"
#include "telemloss/text.hpp"

namespace telemloss::synth {

// ---------------------------------------------------------------------------
// Random streams

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// One independent engine per (key, purpose) derived from the master seed,
/// so adding a draw for one purpose never shifts the draws of another.
inline Engine stream(std::uint64_t master_seed, std::string_view key, std::string_view purpose)
{
    std::uint64_t h = fnv1a(key);
    h = fnv1a("\x1f", h);
    h = fnv1a(purpose, h);
    return Engine(splitmix64(master_seed ^ splitmix64(h)));
}

/// Uniform on the open interval (0, 1) with 53 random bits.
inline double uniform(Engine& eng) noexcept
{
    return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double normal_quantile(double u)
{
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
}

// ---------------------------------------------------------------------------
// Specification

struct SessionCount {
    enum class Kind { fixed, geometric, zipf };
    Kind kind = Kind::fixed;
    double param = 1.0;         // k, success probability p, or exponent s
    std::uint64_t max_k = 1000;  // zipf support is 1..max_k

    static SessionCount fixed(std::uint64_t k) { return {Kind::fixed, static_cast<double>(k), 0}; }
    static SessionCount geometric(double p) { return {Kind::geometric, p, 0}; }
    static SessionCount zipf(double s, std::uint64_t max_k) { return {Kind::zipf, s, max_k}; }

    /// "fixed:3", "geometric:0.02", "zipf:1.2:500".
    static std::optional<SessionCount> parse(std::string_view s)
    {
        const auto colon = s.find(':');
        if (colon == std::string_view::npos) {
            return std::nullopt;
        }
        const auto kind = s.substr(0, colon);
        auto rest = s.substr(colon + 1);
        if (kind == "fixed") {
            const auto k = text::parse_int<std::uint64_t>(rest);
            return k ? std::optional(fixed(*k)) : std::nullopt;
        }
        if (kind == "geometric") {
            const auto p = text::parse_double(rest);
            return p ? std::optional(geometric(*p)) : std::nullopt;
        }
        if (kind == "zipf") {
            const auto c2 = rest.find(':');
            const auto sv = text::parse_double(rest.substr(0, c2));
            const auto mk = c2 == std::string_view::npos ? std::optional<std::uint64_t>(1000)
                                                         : text::parse_int<std::uint64_t>(rest.substr(c2 + 1));
            return sv && mk ? std::optional(zipf(*sv, *mk)) : std::nullopt;
        }
        return std::nullopt;
    }

    std::string to_string() const
    {
        switch (kind) {
        case Kind::fixed: return "fixed:" + std::to_string(static_cast<std::uint64_t>(param));
        case Kind::geometric: return "geometric:" + text::format_double(param);
        case Kind::zipf: return "zipf:" + text::format_double(param) + ":" + std::to_string(max_k);
        }
        return {};
    }

    bool operator==(const SessionCount&) const = default;
};

struct EventTypeSpec {
    std::string name;
    int priority_tier = 1;     // 0 = business KPI ... 2 = operational detail
    double sample_rate = 1.0;  // fraction of sessions that emit the event
};

/// Per-session outcome:
///   Y = baseline_mean + treatment_effect*T + baseline_sd*z(u)
///       + interaction*T*[u < poor_quantile]
/// where u is the session's experience percentile shared by all metrics.
struct MetricModel {
    std::string name;
    std::string event_type;
    double baseline_mean = 0.0;
    double baseline_sd = 1.0;
    double treatment_effect = 0.0;
    double interaction = 0.0;
    double poor_quantile = 0.10;
};

struct SynthSpec {
    std::uint64_t n_endpoints = 1000;
    SessionCount sessions = SessionCount::fixed(1);
    double allocation_ratio = 1.0;  // control : treatment
    std::vector<EventTypeSpec> event_types{{"CST", 0, 1.0}};
    std::vector<MetricModel> metrics;
    std::string server_event_type = "ServerCallRecord";
    bool server_events = true;
    double reset_probability = 0.0;  // chance per session that counters restart at 1
    std::string control_label = "control";
    std::string treatment_label = "treatment";
    std::int64_t start_ts = 1'600'000'000'000;
    std::uint64_t seed = 1;

    void validate() const
    {
        auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::invalid_spec, what); };
        auto prob = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
        check(n_endpoints >= 1, "need at least one endpoint");
        switch (sessions.kind) {
        case SessionCount::Kind::fixed: check(sessions.param >= 1.0, "fixed session count must be >= 1"); break;
        case SessionCount::Kind::geometric:
            check(sessions.param > 0.0 && sessions.param <= 1.0, "geometric p must lie in (0, 1]");
            break;
        case SessionCount::Kind::zipf:
            check(sessions.param > 0.0 && sessions.max_k >= 1, "zipf needs s > 0 and max >= 1");
            break;
        }
        check(std::isfinite(allocation_ratio) && allocation_ratio > 0.0, "allocation ratio must be positive");
        check(prob(reset_probability), "reset probability must lie in [0, 1]");
        check(!control_label.empty() && !treatment_label.empty() && control_label != treatment_label,
              "variant labels must be distinct and non-empty");
        std::set<std::string> names;
        for (const auto& t : event_types) {
            check(!t.name.empty() && names.insert(t.name).second, "event type names must be unique and non-empty");
            check(prob(t.sample_rate), "sample rate of '" + t.name + "' must lie in [0, 1]");
        }
        check(!server_events || !names.contains(server_event_type), "server event type clashes with a client type");
        std::set<std::string> metric_names;
        for (const auto& m : metrics) {
            check(!m.name.empty() && metric_names.insert(m.name).second, "metric names must be unique");
            check(names.contains(m.event_type), "metric '" + m.name + "' references unknown event type");
            check(std::isfinite(m.baseline_mean) && m.baseline_sd >= 0.0, "metric '" + m.name + "' has bad moments");
            check(prob(m.poor_quantile), "poor quantile of '" + m.name + "' must lie in [0, 1]");
        }
    }
};

// ---------------------------------------------------------------------------
// Ground truth

struct RateCount {
    std::uint64_t lost = 0;
    std::uint64_t total = 0;

    double rate() const { return total == 0 ? 0.0 : static_cast<double>(lost) / static_cast<double>(total); }
    bool operator==(const RateCount&) const = default;
};

struct MetricTruth {
    double treatment_effect = 0.0;
    double interaction = 0.0;
    double full_mean_ctrl = 0.0;
    double full_mean_trt = 0.0;
    std::uint64_t n_ctrl = 0;
    std::uint64_t n_trt = 0;

    double full_delta() const { return full_mean_trt - full_mean_ctrl; }
};

struct GroundTruth {
    std::uint64_t seed = 0;
    std::string control_label = "control";
    std::string treatment_label = "treatment";
    std::uint64_t endpoints_ctrl = 0;
    std::uint64_t endpoints_trt = 0;
    std::uint64_t sessions = 0;
    /// event_type -> variant -> realized loss; "*" aggregates variants.
    std::map<std::string, std::map<std::string, RateCount>> loss;
    std::map<std::string, MetricTruth> metrics;
    /// event_type -> legs whose client event was dropped.
    std::map<std::string, std::set<LegId>> lost_legs;

    double loss_rate(const std::string& event_type, const std::string& variant = "*") const
    {
        const auto t = loss.find(event_type);
        if (t == loss.end()) {
            return 0.0;
        }
        const auto v = t->second.find(variant);
        return v == t->second.end() ? 0.0 : v->second.rate();
    }
};

struct Population {
    EventLog log;  // client and server events, per endpoint in time order
    GroundTruth truth;
};

namespace detail {

inline std::uint64_t draw_sessions(const SessionCount& sc, Engine& eng, std::span<const double> zipf_cdf)
{
    switch (sc.kind) {
    case SessionCount::Kind::fixed: return static_cast<std::uint64_t>(sc.param);
    case SessionCount::Kind::geometric: {
        if (sc.param >= 1.0) {
            return 1;
        }
        const double u = uniform(eng);
        return 1 + static_cast<std::uint64_t>(std::floor(std::log(u) / std::log1p(-sc.param)));
    }
    case SessionCount::Kind::zipf: {
        const double u = uniform(eng) * zipf_cdf.back();
        const auto it = std::lower_bound(zipf_cdf.begin(), zipf_cdf.end(), u);
        return 1 + static_cast<std::uint64_t>(it - zipf_cdf.begin());
    }
    }
    return 1;
}

}  // namespace detail

/// Draws the per-session quantities of one session; exposed so large-sample
/// checks can stream sessions without materializing a log.
struct SessionDraw {
    double quality = 0.5;  // experience percentile u
    std::vector<double> outcomes;  // one per spec metric
};

inline SessionDraw draw_session(const SynthSpec& spec, bool treated, Engine& quality_stream)
{
    SessionDraw d;
    d.quality = uniform(quality_stream);
    const double z = normal_quantile(d.quality);
    d.outcomes.reserve(spec.metrics.size());
    const double t = treated ? 1.0 : 0.0;
    for (const auto& m : spec.metrics) {
        double y = m.baseline_mean + m.treatment_effect * t + m.baseline_sd * z;
        if (treated && d.quality < m.poor_quantile) {
            y += m.interaction;
        }
        d.outcomes.push_back(y);
    }
    return d;
}

inline Population generate_population(const SynthSpec& spec)
{
    spec.validate();
    Population pop;
    pop.log.source = "synth:seed=" + std::to_string(spec.seed);
    auto& truth = pop.truth;
    truth.seed = spec.seed;
    truth.control_label = spec.control_label;
    truth.treatment_label = spec.treatment_label;

    std::vector<double> zipf_cdf;
    if (spec.sessions.kind == SessionCount::Kind::zipf) {
        double acc = 0.0;
        for (std::uint64_t k = 1; k <= spec.sessions.max_k; ++k) {
            acc += std::pow(static_cast<double>(k), -spec.sessions.param);
            zipf_cdf.push_back(acc);
        }
    }

    struct Acc {
        double sum_ctrl = 0.0, sum_trt = 0.0;
        std::uint64_t n_ctrl = 0, n_trt = 0;
    };
    std::vector<Acc> acc(spec.metrics.size());
    const double p_ctrl = spec.allocation_ratio / (1.0 + spec.allocation_ratio);

    for (std::uint64_t ep = 0; ep < spec.n_endpoints; ++ep) {
        const std::string endpoint = "e" + std::to_string(ep);
        Engine variant_rng = stream(spec.seed, endpoint, "variant");
        Engine session_rng = stream(spec.seed, endpoint, "sessions");
        Engine quality_rng = stream(spec.seed, endpoint, "quality");
        Engine reset_rng = stream(spec.seed, endpoint, "reset");
        const bool treated = uniform(variant_rng) >= p_ctrl;
        const std::string& variant = treated ? spec.treatment_label : spec.control_label;
        ++(treated ? truth.endpoints_trt : truth.endpoints_ctrl);

        std::vector<Engine> sample_rng;
        sample_rng.reserve(spec.event_types.size());
        for (const auto& t : spec.event_types) {
            sample_rng.push_back(stream(spec.seed, endpoint, "sample:" + t.name));
        }
        std::vector<std::uint64_t> counter(spec.event_types.size(), 0);

        const std::uint64_t n_sessions = detail::draw_sessions(spec.sessions, session_rng, zipf_cdf);
        for (std::uint64_t k = 0; k < n_sessions; ++k) {
            ++truth.sessions;
            const std::string session = endpoint + "." + std::to_string(k);
            const std::int64_t ts = spec.start_ts + static_cast<std::int64_t>(k) * 60'000 +
                                    static_cast<std::int64_t>(ep % 60'000);
            if (k > 0 && spec.reset_probability > 0.0 && uniform(reset_rng) < spec.reset_probability) {
                std::ranges::fill(counter, 0);
            }
            const auto draw = draw_session(spec, treated, quality_rng);
            for (std::size_t m = 0; m < spec.metrics.size(); ++m) {
                auto& a = acc[m];
                (treated ? a.sum_trt : a.sum_ctrl) += draw.outcomes[m];
                ++(treated ? a.n_trt : a.n_ctrl);
            }
            if (spec.server_events) {
                Event e;
                e.session_id = session;
                e.endpoint_id = endpoint;
                e.source = Source::server;
                e.event_type = spec.server_event_type;
                e.variant = variant;
                e.timestamp = ts;
                pop.log.events.push_back(std::move(e));
            }
            for (std::size_t t = 0; t < spec.event_types.size(); ++t) {
                const auto& type = spec.event_types[t];
                if (type.sample_rate < 1.0 && uniform(sample_rng[t]) >= type.sample_rate) {
                    continue;
                }
                Event e;
                e.session_id = session;
                e.endpoint_id = endpoint;
                e.source = Source::client;
                e.event_type = type.name;
                e.variant = variant;
                e.seq = ++counter[t];
                e.timestamp = ts + 1;
                for (std::size_t m = 0; m < spec.metrics.size(); ++m) {
                    if (spec.metrics[m].event_type == type.name) {
                        e.measures.emplace(spec.metrics[m].name, draw.outcomes[m]);
                    }
                }
                auto& counts = truth.loss[type.name];
                ++counts["*"].total;
                ++counts[variant].total;
                pop.log.events.push_back(std::move(e));
            }
        }
    }
    for (std::size_t m = 0; m < spec.metrics.size(); ++m) {
        const auto& model = spec.metrics[m];
        const auto& a = acc[m];
        truth.metrics[model.name] = MetricTruth{
            model.treatment_effect, model.interaction,
            a.n_ctrl ? a.sum_ctrl / static_cast<double>(a.n_ctrl) : 0.0,
            a.n_trt ? a.sum_trt / static_cast<double>(a.n_trt) : 0.0, a.n_ctrl, a.n_trt};
    }
    return pop;
}

// ---------------------------------------------------------------------------
// Loss

struct LossMechanism {
    enum class Kind { mar, outcome_correlated, treatment_correlated, crash_strata };

    Kind kind = Kind::mar;
    std::string event_type;
    double p = 0.0;                 // mar
    double p_low = 0.0;             // outcome_correlated, outside the poor tail
    double p_high = 0.0;            // outcome_correlated, inside the poor tail
    double percentile_cut = 0.10;   // outcome_correlated / crash_strata
    double p_ctrl = 0.0;            // treatment_correlated
    double p_trt = 0.0;
    std::string measure;            // outcome the tail is measured on
    Tail poor_tail = Tail::lower;

    static LossMechanism mar(std::string type, double p)
    {
        LossMechanism m;
        m.kind = Kind::mar;
        m.event_type = std::move(type);
        m.p = p;
        return m;
    }

    static LossMechanism outcome_correlated(std::string type, std::string measure, double p_low, double p_high,
                                            double cut, Tail tail = Tail::lower)
    {
        LossMechanism m;
        m.kind = Kind::outcome_correlated;
        m.event_type = std::move(type);
        m.measure = std::move(measure);
        m.p_low = p_low;
        m.p_high = p_high;
        m.percentile_cut = cut;
        m.poor_tail = tail;
        return m;
    }

    static LossMechanism treatment_correlated(std::string type, double p_ctrl, double p_trt)
    {
        LossMechanism m;
        m.kind = Kind::treatment_correlated;
        m.event_type = std::move(type);
        m.p_ctrl = p_ctrl;
        m.p_trt = p_trt;
        return m;
    }

    /// Everything in the poor tail is lost (an app crash takes the whole
    /// stratum), nothing outside it.
    static LossMechanism crash_strata(std::string type, std::string measure, double cut, Tail tail = Tail::lower)
    {
        LossMechanism m;
        m.kind = Kind::crash_strata;
        m.event_type = std::move(type);
        m.measure = std::move(measure);
        m.percentile_cut = cut;
        m.poor_tail = tail;
        return m;
    }

    std::string_view kind_name() const noexcept
    {
        switch (kind) {
        case Kind::mar: return "mar";
        case Kind::outcome_correlated: return "outcome_correlated";
        case Kind::treatment_correlated: return "treatment_correlated";
        case Kind::crash_strata: return "crash_strata";
        }
        return "mar";
    }

    /// "mar:CST:0.03", "treatment_correlated:CST:0.10:0.107",
    /// "outcome_correlated:CST:duration:0.02:0.30:0.10[:upper]",
    /// "crash_strata:CST:duration:0.10[:upper]".
    static std::optional<LossMechanism> parse(std::string_view s)
    {
        std::vector<std::string> parts;
        while (true) {
            const auto c = s.find(':');
            parts.emplace_back(s.substr(0, c));
            if (c == std::string_view::npos) {
                break;
            }
            s.remove_prefix(c + 1);
        }
        auto num = [&](std::size_t i) { return i < parts.size() ? text::parse_double(parts[i]) : std::nullopt; };
        auto tail_at = [&](std::size_t i) -> std::optional<Tail> {
            if (i >= parts.size() || parts[i] == "lower") return Tail::lower;
            if (parts[i] == "upper") return Tail::upper;
            return std::nullopt;
        };
        if (parts.size() < 3) {
            return std::nullopt;
        }
        const auto& kind = parts[0];
        if (kind == "mar" && parts.size() == 3 && num(2)) {
            return mar(parts[1], *num(2));
        }
        if (kind == "treatment_correlated" && parts.size() == 4 && num(2) && num(3)) {
            return treatment_correlated(parts[1], *num(2), *num(3));
        }
        if (kind == "outcome_correlated" && (parts.size() == 6 || parts.size() == 7) && num(3) && num(4) &&
            num(5) && tail_at(6)) {
            return outcome_correlated(parts[1], parts[2], *num(3), *num(4), *num(5), *tail_at(6));
        }
        if (kind == "crash_strata" && (parts.size() == 4 || parts.size() == 5) && num(3) && tail_at(4)) {
            return crash_strata(parts[1], parts[2], *num(3), *tail_at(4));
        }
        return std::nullopt;
    }

    void validate() const
    {
        auto prob = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
        require(prob(p) && prob(p_low) && prob(p_high) && prob(p_ctrl) && prob(p_trt) && prob(percentile_cut),
                ErrorCode::invalid_spec, "loss mechanism rates must lie in [0, 1]");
        const bool needs_measure = kind == Kind::outcome_correlated || kind == Kind::crash_strata;
        require(!needs_measure || !measure.empty(), ErrorCode::invalid_spec,
                std::string(kind_name()) + " needs an outcome measure");
    }
};

/// Drops client events according to the mechanisms (server events are never
/// dropped) and records the realized loss in the returned ground truth.
/// Outcome tails are computed per variant so an outcome-based mechanism does
/// not by itself unbalance the arms.
inline Population apply_loss(const Population& full, std::span<const LossMechanism> mechanisms, std::uint64_t seed)
{
    std::set<std::string> client_types;
    for (const auto& e : full.log.events) {
        if (e.source == Source::client) {
            client_types.insert(e.event_type);
        }
    }
    std::vector<std::string> purposes;
    std::map<std::string, int> occurrences;
    for (const auto& m : mechanisms) {
        m.validate();
        require(client_types.contains(m.event_type), ErrorCode::unknown_event_type,
                "loss mechanism targets unknown event type '" + m.event_type + "'");
        std::string purpose = "loss:" + m.event_type + ":" + std::string(m.kind_name());
        const int n = occurrences[purpose]++;
        purposes.push_back(n == 0 ? purpose : purpose + ":" + std::to_string(n));
    }

    // Tail thresholds per (mechanism, variant).
    std::vector<std::map<std::string, double>> cuts(mechanisms.size());
    for (std::size_t i = 0; i < mechanisms.size(); ++i) {
        const auto& m = mechanisms[i];
        if (m.kind != LossMechanism::Kind::outcome_correlated && m.kind != LossMechanism::Kind::crash_strata) {
            continue;
        }
        std::map<std::string, std::vector<double>> values;
        for (const auto& e : full.log.events) {
            if (e.source == Source::client && e.event_type == m.event_type) {
                if (const auto v = e.numeric(m.measure)) {
                    values[e.variant.value_or("")].push_back(*v);
                }
            }
        }
        for (auto& [variant, v] : values) {
            std::ranges::sort(v);
            if (m.poor_tail == Tail::upper) {
                std::ranges::reverse(v);
            }
            const auto rank = static_cast<std::size_t>(std::ceil(m.percentile_cut * static_cast<double>(v.size())));
            cuts[i][variant] = rank == 0 ? (m.poor_tail == Tail::lower ? -HUGE_VAL : HUGE_VAL) : v[rank - 1];
        }
    }

    Population out;
    out.truth = full.truth;
    out.truth.seed = seed;
    out.truth.loss.clear();
    out.truth.lost_legs.clear();
    out.log.source = full.log.source + ";loss_seed=" + std::to_string(seed);
    out.log.events.reserve(full.log.events.size());

    std::unordered_map<std::string, Engine> engines;
    auto engine_for = [&](const std::string& endpoint, std::size_t i) -> Engine& {
        std::string key = endpoint;
        key += '\x1f';
        key += purposes[i];
        auto it = engines.find(key);
        if (it == engines.end()) {
            it = engines.emplace(std::move(key), stream(seed, endpoint, purposes[i])).first;
        }
        return it->second;
    };

    std::string last_endpoint;
    for (const auto& e : full.log.events) {
        if (e.endpoint_id != last_endpoint) {
            // Generated logs are grouped by endpoint; finished engines are not needed again.
            if (engines.size() > 4096) {
                engines.clear();
            }
            last_endpoint = e.endpoint_id;
        }
        if (e.source != Source::client) {
            out.log.events.push_back(e);
            continue;
        }
        bool lost = false;
        const std::string variant = e.variant.value_or("");
        for (std::size_t i = 0; i < mechanisms.size(); ++i) {
            const auto& m = mechanisms[i];
            if (m.event_type != e.event_type) {
                continue;
            }
            const double u = uniform(engine_for(e.endpoint_id, i));
            double p = 0.0;
            switch (m.kind) {
            case LossMechanism::Kind::mar: p = m.p; break;
            case LossMechanism::Kind::treatment_correlated:
                p = variant == full.truth.treatment_label ? m.p_trt : m.p_ctrl;
                break;
            case LossMechanism::Kind::outcome_correlated:
            case LossMechanism::Kind::crash_strata: {
                const auto v = e.numeric(m.measure);
                bool poor = false;
                if (v) {
                    const double cut = cuts[i].at(variant);
                    poor = m.poor_tail == Tail::lower ? *v <= cut : *v >= cut;
                }
                if (m.kind == LossMechanism::Kind::crash_strata) {
                    p = poor ? 1.0 : 0.0;
                } else {
                    p = poor ? m.p_high : m.p_low;
                }
                break;
            }
            }
            lost = lost || u < p;
        }
        auto& counts = out.truth.loss[e.event_type];
        ++counts["*"].total;
        ++counts[variant].total;
        if (lost) {
            ++counts["*"].lost;
            ++counts[variant].lost;
            out.truth.lost_legs[e.event_type].insert(e.leg());
        } else {
            out.log.events.push_back(e);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar

inline nlohmann::ordered_json ground_truth_to_json(const GroundTruth& t)
{
    nlohmann::ordered_json j;
    j["seed"] = t.seed;
    j["variants"] = {{"control", t.control_label}, {"treatment", t.treatment_label}};
    j["endpoints"] = {{"control", t.endpoints_ctrl}, {"treatment", t.endpoints_trt}};
    j["sessions"] = t.sessions;
    auto& loss = j["loss"] = nlohmann::ordered_json::object();
    for (const auto& [type, by_variant] : t.loss) {
        auto& row = loss[type] = nlohmann::ordered_json::object();
        for (const auto& [variant, rc] : by_variant) {
            row[variant] = {{"lost", rc.lost}, {"total", rc.total}, {"rate", rc.rate()}};
        }
    }
    auto& metrics = j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [name, m] : t.metrics) {
        metrics[name] = {{"treatment_effect", m.treatment_effect},
                         {"interaction", m.interaction},
                         {"full_mean_ctrl", m.full_mean_ctrl},
                         {"full_mean_trt", m.full_mean_trt},
                         {"full_delta", m.full_delta()},
                         {"n_ctrl", m.n_ctrl},
                         {"n_trt", m.n_trt}};
    }
    return j;
}

/// Writes the sidecar; `echo` holds the generating parameters.
inline void write_ground_truth(std::ostream& out, const GroundTruth& t,
                               const std::vector<std::pair<std::string, std::string>>& echo = {})
{
    auto j = ground_truth_to_json(t);
    auto& cfg = j["config"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : echo) {
        cfg[k] = v;
    }
    out << j.dump(2) << '\n';
}

/// Reads a sidecar back; per-leg labels are not part of the file.
inline GroundTruth read_ground_truth(std::istream& in)
{
    require(static_cast<bool>(in), ErrorCode::unreadable_stream, "cannot read ground truth");
    const auto j = nlohmann::json::parse(in, nullptr, false);
    require(!j.is_discarded() && j.is_object(), ErrorCode::parse_error, "ground truth JSON is malformed");
    try {
        GroundTruth t;
        t.seed = j.at("seed").get<std::uint64_t>();
        t.control_label = j.at("variants").at("control").get<std::string>();
        t.treatment_label = j.at("variants").at("treatment").get<std::string>();
        t.endpoints_ctrl = j.at("endpoints").at("control").get<std::uint64_t>();
        t.endpoints_trt = j.at("endpoints").at("treatment").get<std::uint64_t>();
        t.sessions = j.at("sessions").get<std::uint64_t>();
        for (const auto& [type, by_variant] : j.at("loss").items()) {
            for (const auto& [variant, rc] : by_variant.items()) {
                t.loss[type][variant] = {rc.at("lost").get<std::uint64_t>(), rc.at("total").get<std::uint64_t>()};
            }
        }
        for (const auto& [name, m] : j.at("metrics").items()) {
            t.metrics[name] = {m.at("treatment_effect").get<double>(), m.at("interaction").get<double>(),
                               m.at("full_mean_ctrl").get<double>(),   m.at("full_mean_trt").get<double>(),
                               m.at("n_ctrl").get<std::uint64_t>(),    m.at("n_trt").get<std::uint64_t>()};
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse_error, std::string("ground truth JSON: ") + e.what());
    }
}

}  // namespace telemloss::synth
