#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "telemloss/bias_model.hpp"
#include "telemloss/error.hpp"
#include "telemloss/event_model.hpp"
#include "telemloss/loss_estimation.hpp"
#include "telemloss/simulation.hpp"
#include "telemloss/stats.hpp"
#include "telemloss/text.hpp"

namespace telemloss {

enum class Aggregation { mean, rate };
enum class Direction { higher_is_better, lower_is_better, two_sided };

constexpr std::string_view to_string(Aggregation a) noexcept { return a == Aggregation::mean ? "mean" : "rate"; }

constexpr std::string_view to_string(Direction d) noexcept
{
    switch (d) {
    case Direction::higher_is_better: return "higher_is_better";
    case Direction::lower_is_better: return "lower_is_better";
    case Direction::two_sided: return "two_sided";
    }
    return "two_sided";
}

inline std::optional<Aggregation> parse_aggregation(std::string_view s) noexcept
{
    if (s == "mean") return Aggregation::mean;
    if (s == "rate") return Aggregation::rate;
    return std::nullopt;
}

inline std::optional<Direction> parse_direction(std::string_view s) noexcept
{
    if (s == "higher_is_better") return Direction::higher_is_better;
    if (s == "lower_is_better") return Direction::lower_is_better;
    if (s == "two_sided") return Direction::two_sided;
    return std::nullopt;
}

/// A metric is a per-session value read from one measure of one event type.
/// `rate` metrics count the measure as 1 when it is non-zero.
struct MetricDefinition {
    std::string name;
    std::string event_type;
    std::string measure;
    Aggregation aggregation = Aggregation::mean;
    Direction direction = Direction::two_sided;

    bool operator==(const MetricDefinition&) const = default;
};

/// Reads "name,event_type,measure,aggregation,direction" lines.
inline std::vector<MetricDefinition> read_metric_definitions(std::istream& in)
{
    require(static_cast<bool>(in), ErrorCode::unreadable_stream, "cannot read metric definitions");
    std::vector<MetricDefinition> defs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = text::trim(line);
        if (t.empty() || t.starts_with('#') || t.starts_with("name,")) {
            continue;
        }
        const auto cells = text::split_csv(t);
        const auto where = "metrics line " + std::to_string(line_no);
        require(cells && cells->size() == 5, ErrorCode::parse_error, where + ": expected 5 fields");
        const auto agg = parse_aggregation((*cells)[3]);
        const auto dir = parse_direction((*cells)[4]);
        require(agg && dir && !(*cells)[0].empty() && !(*cells)[1].empty(), ErrorCode::parse_error,
                where + ": invalid metric definition");
        for (const auto& d : defs) {
            require(d.name != (*cells)[0], ErrorCode::parse_error, where + ": duplicate metric name");
        }
        defs.push_back({(*cells)[0], (*cells)[1], (*cells)[2], *agg, *dir});
    }
    return defs;
}

enum class Flag : std::uint8_t { srm = 1, corr_bias = 2, high_loss = 4, inconclusive = 8 };

class FlagSet {
public:
    constexpr FlagSet() = default;

    constexpr void set(Flag f) noexcept { bits_ |= static_cast<std::uint8_t>(f); }
    constexpr bool has(Flag f) const noexcept { return (bits_ & static_cast<std::uint8_t>(f)) != 0; }
    constexpr bool empty() const noexcept { return bits_ == 0; }
    constexpr FlagSet& operator|=(FlagSet o) noexcept
    {
        bits_ |= o.bits_;
        return *this;
    }

    /// "SRM|CORR_BIAS|HIGH_LOSS|INCONCLUSIVE" in that fixed order.
    std::string to_string() const
    {
        std::string out;
        for (const auto& [flag, name] : kNames) {
            if (has(flag)) {
                if (!out.empty()) {
                    out += '|';
                }
                out += name;
            }
        }
        return out;
    }

    static std::optional<FlagSet> parse(std::string_view s)
    {
        FlagSet f;
        while (!s.empty()) {
            const auto bar = s.find('|');
            const auto token = s.substr(0, bar);
            bool known = false;
            for (const auto& [flag, name] : kNames) {
                if (token == name) {
                    f.set(flag);
                    known = true;
                }
            }
            if (!known) {
                return std::nullopt;
            }
            s = bar == std::string_view::npos ? std::string_view{} : s.substr(bar + 1);
        }
        return f;
    }

    bool operator==(const FlagSet&) const = default;

private:
    static constexpr std::pair<Flag, std::string_view> kNames[] = {
        {Flag::srm, "SRM"},
        {Flag::corr_bias, "CORR_BIAS"},
        {Flag::high_loss, "HIGH_LOSS"},
        {Flag::inconclusive, "INCONCLUSIVE"},
    };
    std::uint8_t bits_ = 0;
};

/// Delta, relative delta and p-value of one scorecard column.
struct ColumnResult {
    double delta = 0.0;
    double relative = 0.0;
    double p_value = 1.0;

    bool operator==(const ColumnResult&) const = default;
};

struct MetricResult {
    std::string name;
    std::string event_type;
    ColumnResult observed;
    ColumnResult best;
    ColumnResult worst;
    double beta_int_best = 0.0;
    double beta_int_worst = 0.0;
    double loss_ctrl = 0.0;
    double loss_trt = 0.0;
    FlagSet flags;
    std::vector<std::string> notes;

    bool operator==(const MetricResult&) const = default;
};

struct VariantPair {
    std::string control = "control";
    std::string treatment = "treatment";

    bool operator==(const VariantPair&) const = default;
};

/// Loss of one event type in each arm.
struct VariantLoss {
    LossEstimate ctrl;
    LossEstimate trt;

    bool operator==(const VariantLoss&) const = default;
};

enum class BoundKind { relative_to_baseline, absolute };

struct ScorecardConfig {
    double alpha = kDefaultAlpha;
    double loss_threshold = 0.05;
    /// |beta_int| for the best/worst-case columns; a fraction of the observed
    /// control mean unless `bound_kind` is absolute.
    double scenario_bound = 0.05;
    BoundKind bound_kind = BoundKind::relative_to_baseline;
    double expected_ratio = 1.0;
    double lost_tail_fraction = 0.10;

    bool operator==(const ScorecardConfig&) const = default;
};

struct Scorecard {
    std::string experiment_id;
    VariantPair variants;
    std::map<std::string, VariantLoss> loss;  // by event type
    std::vector<MetricResult> metrics;
    TestResult srm;
    std::uint64_t units_ctrl = 0;
    std::uint64_t units_trt = 0;
    ScorecardConfig config;

    bool operator==(const Scorecard&) const = default;
};

namespace detail {

inline double degenerate_p(double delta) noexcept
{
    return delta == 0.0 ? 1.0 : std::numeric_limits<double>::min();
}

inline ColumnResult observed_column(const ObservedArm& ctrl, const ObservedArm& trt)
{
    ColumnResult c;
    c.delta = trt.mean - ctrl.mean;
    c.relative = c.delta / ctrl.mean;
    const double se = stats::welch_se(trt.variance, static_cast<double>(trt.n_observed), ctrl.variance,
                                      static_cast<double>(ctrl.n_observed));
    c.p_value = se > 0.0 ? positive_p(stats::two_sided_p(c.delta / se)) : degenerate_p(c.delta);
    return c;
}

inline ColumnResult simulated_column(const ObservedArm& ctrl, const ObservedArm& trt,
                                     const LossScenario& scenario)
{
    try {
        const auto r = simulate_treatment_effect(ctrl, trt, scenario);
        return {r.delta, r.relative_delta(), r.p_value};
    } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_variance) {
            throw;
        }
        const double mean_ctrl = combine_mean(ctrl.loss_rate, ctrl.mean, scenario.lost_mean_ctrl);
        const double delta = trt.mean - ctrl.mean;
        return {delta, delta / mean_ctrl, degenerate_p(delta)};
    }
}

inline bool positive_is_good(Direction d) noexcept { return d == Direction::higher_is_better; }

}  // namespace detail

/// Best and worst simulated columns straddle the decision boundary: one is
/// significant and the other not, or both are significant in opposite
/// directions.
inline bool is_inconclusive(const MetricResult& r, double alpha)
{
    const bool sig_best = r.best.p_value < alpha;
    const bool sig_worst = r.worst.p_value < alpha;
    if (sig_best != sig_worst) {
        return true;
    }
    return sig_best && sig_worst && ((r.best.delta > 0) != (r.worst.delta > 0));
}

/// Trust flags of one metric from its source event's loss. SRM is a
/// scorecard-level check and is added by build_scorecard.
inline FlagSet flag_metrics(const MetricResult& result, const VariantLoss& loss,
                            double threshold = 0.05, double alpha = kDefaultAlpha)
{
    FlagSet flags;
    const double worst_arm = std::max(loss.ctrl.rate().value_or(0.0), loss.trt.rate().value_or(0.0));
    if (worst_arm > threshold) {
        flags.set(Flag::high_loss);
    }
    if (loss.ctrl.expected_events > 0 && loss.trt.expected_events > 0) {
        const auto t = loss_rate_imbalance_test(loss.ctrl.events_lost, loss.ctrl.expected_events,
                                                loss.trt.events_lost, loss.trt.expected_events, alpha);
        if (t.significant) {
            flags.set(Flag::corr_bias);
        }
    }
    if (is_inconclusive(result, alpha)) {
        flags.set(Flag::inconclusive);
    }
    return flags;
}

/// Observed summaries of one metric plus the lost-stratum hypothesis used
/// for its best/worst-case columns (beta_int is filled in from the bound).
struct MetricSummary {
    MetricDefinition definition;
    ObservedArm ctrl;  // loss_rate is taken from the loss estimates
    ObservedArm trt;
    double lost_mean_ctrl = 0.0;
    double lost_sd_ctrl = 0.0;
    std::vector<std::string> notes;
};

inline MetricResult evaluate_metric(const MetricSummary& summary, const VariantLoss& loss,
                                    const ScorecardConfig& config)
{
    const auto& def = summary.definition;
    const auto rate_ctrl = loss.ctrl.rate();
    const auto rate_trt = loss.trt.rate();
    require(rate_ctrl && rate_trt, ErrorCode::missing_loss_estimate,
            "event type '" + def.event_type + "' has no expected events in one arm");
    require(summary.ctrl.n_observed > 1 && summary.trt.n_observed > 1, ErrorCode::degenerate_sample,
            "metric '" + def.name + "' needs more than one observation per arm");

    MetricResult r;
    r.name = def.name;
    r.event_type = def.event_type;
    r.loss_ctrl = *rate_ctrl;
    r.loss_trt = *rate_trt;
    r.notes = summary.notes;

    ObservedArm ctrl = summary.ctrl;
    ObservedArm trt = summary.trt;
    ctrl.loss_rate = r.loss_ctrl;
    trt.loss_rate = r.loss_trt;
    r.observed = detail::observed_column(ctrl, trt);

    const double bound = config.bound_kind == BoundKind::absolute ? std::fabs(config.scenario_bound)
                                                                  : std::fabs(config.scenario_bound * ctrl.mean);
    r.beta_int_best = detail::positive_is_good(def.direction) ? bound : -bound;
    r.beta_int_worst = -r.beta_int_best;
    LossScenario scenario{summary.lost_mean_ctrl, summary.lost_sd_ctrl, r.beta_int_best, std::nullopt};
    r.best = detail::simulated_column(ctrl, trt, scenario);
    scenario.beta_int = r.beta_int_worst;
    r.worst = detail::simulated_column(ctrl, trt, scenario);
    r.flags = flag_metrics(r, loss, config.loss_threshold, config.alpha);
    return r;
}

/// Scorecard from pre-aggregated summaries (no per-session records needed).
inline Scorecard build_scorecard_from_summaries(std::span<const MetricSummary> summaries,
                                                const std::map<std::string, VariantLoss>& loss,
                                                std::uint64_t units_ctrl, std::uint64_t units_trt,
                                                const ScorecardConfig& config = {},
                                                std::string experiment_id = {}, VariantPair variants = {})
{
    Scorecard card;
    card.experiment_id = std::move(experiment_id);
    card.variants = std::move(variants);
    card.config = config;
    card.units_ctrl = units_ctrl;
    card.units_trt = units_trt;
    card.srm = srm_test(units_ctrl, units_trt, config.expected_ratio, config.alpha);
    for (const auto& s : summaries) {
        const auto it = loss.find(s.definition.event_type);
        require(it != loss.end(), ErrorCode::missing_loss_estimate,
                "no loss estimate for event type '" + s.definition.event_type + "'");
        card.loss[it->first] = it->second;
        auto result = evaluate_metric(s, it->second, config);
        if (card.srm.significant) {
            result.flags.set(Flag::srm);
        }
        card.metrics.push_back(std::move(result));
    }
    return card;
}

/// Per-arm metric values from joined records.
inline std::pair<std::vector<double>, std::vector<double>>
metric_values(std::span<const SessionRecord> records, const MetricDefinition& def, const VariantPair& variants)
{
    std::vector<double> ctrl;
    std::vector<double> trt;
    for (const auto& rec : records) {
        if (!rec.variant) {
            continue;
        }
        const bool is_ctrl = *rec.variant == variants.control;
        if (!is_ctrl && *rec.variant != variants.treatment) {
            continue;
        }
        const auto* ev = rec.event(def.event_type);
        if (ev == nullptr) {
            continue;
        }
        std::optional<double> value;
        if (const auto it = ev->measures.find(def.measure); it != ev->measures.end()) {
            if (const auto* d = std::get_if<double>(&it->second)) {
                value = *d;
            }
        }
        if (def.aggregation == Aggregation::rate) {
            value = value.value_or(0.0) != 0.0 ? 1.0 : 0.0;
        }
        if (value) {
            (is_ctrl ? ctrl : trt).push_back(*value);
        }
    }
    return {std::move(ctrl), std::move(trt)};
}

/// Loss estimates per event type for the configured arms, from a loss report.
inline std::map<std::string, VariantLoss> variant_losses(std::span<const LossReportRow> rows,
                                                         const VariantPair& variants = {})
{
    std::map<std::string, VariantLoss> out;
    std::map<std::string, int> seen;  // bit 1: control, bit 2: treatment
    for (const auto& r : rows) {
        if (r.variant == variants.control) {
            out[r.event_type].ctrl = r.estimate();
            seen[r.event_type] |= 1;
        } else if (r.variant == variants.treatment) {
            out[r.event_type].trt = r.estimate();
            seen[r.event_type] |= 2;
        }
    }
    for (auto it = out.begin(); it != out.end();) {
        it = seen[it->first] == 3 ? std::next(it) : out.erase(it);
    }
    return out;
}

/// Scorecard from joined session records. Arm sizes for the SRM check are
/// the legs that delivered at least one client event.
inline Scorecard build_scorecard(std::span<const SessionRecord> records,
                                 std::span<const MetricDefinition> metrics,
                                 const std::map<std::string, VariantLoss>& loss,
                                 const ScorecardConfig& config = {}, std::string experiment_id = {},
                                 VariantPair variants = {})
{
    // SRM counts randomization units (endpoints), not legs: session counts
    // per endpoint vary, so leg totals are overdispersed.
    std::set<std::string_view> endpoints_ctrl;
    std::set<std::string_view> endpoints_trt;
    std::map<std::string, std::uint64_t> event_types;
    for (const auto& rec : records) {
        for (const auto& [type, summary] : rec.events) {
            ++event_types[type];
        }
        if (!rec.variant || !rec.has_source(Source::client)) {
            continue;
        }
        if (*rec.variant == variants.control) {
            endpoints_ctrl.insert(rec.leg.endpoint_id);
        } else if (*rec.variant == variants.treatment) {
            endpoints_trt.insert(rec.leg.endpoint_id);
        }
    }
    const std::uint64_t units_ctrl = endpoints_ctrl.size();
    const std::uint64_t units_trt = endpoints_trt.size();
    require(units_ctrl > 0, ErrorCode::unknown_variant, "no records in variant '" + variants.control + "'");
    require(units_trt > 0, ErrorCode::unknown_variant, "no records in variant '" + variants.treatment + "'");

    std::vector<MetricSummary> summaries;
    for (const auto& def : metrics) {
        require(event_types.contains(def.event_type), ErrorCode::unknown_event_type,
                "metric '" + def.name + "' reads event type '" + def.event_type + "' absent from the log");
        require(loss.contains(def.event_type), ErrorCode::missing_loss_estimate,
                "no loss estimate for event type '" + def.event_type + "'");
        const auto [ctrl_values, trt_values] = metric_values(records, def, variants);
        const auto mc = stats::moments(ctrl_values);
        const auto mt = stats::moments(trt_values);
        MetricSummary s;
        s.definition = def;
        s.ctrl = {mc.n, mc.mean, mc.variance, 0.0};
        s.trt = {mt.n, mt.mean, mt.variance, 0.0};
        const Tail tail = def.direction == Direction::lower_is_better ? Tail::upper : Tail::lower;
        try {
            const auto lost = default_lost_scenario(ctrl_values, tail, config.lost_tail_fraction);
            s.lost_mean_ctrl = lost.lost_mean_ctrl;
            s.lost_sd_ctrl = lost.lost_sd_ctrl;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::insufficient_data) {
                throw;
            }
            s.lost_mean_ctrl = mc.mean;
            s.lost_sd_ctrl = mc.sd();
            s.notes.push_back("lost stratum uses observed control statistics (too few observations)");
        }
        summaries.push_back(std::move(s));
    }
    return build_scorecard_from_summaries(summaries, loss, units_ctrl, units_trt, config,
                                          std::move(experiment_id), std::move(variants));
}

// ---------------------------------------------------------------------------
// Rendering

enum class ScorecardFormat { text_table, csv, json };

inline std::optional<ScorecardFormat> parse_scorecard_format(std::string_view s) noexcept
{
    if (s == "text" || s == "text_table") return ScorecardFormat::text_table;
    if (s == "csv") return ScorecardFormat::csv;
    if (s == "json") return ScorecardFormat::json;
    return std::nullopt;
}

namespace detail {

inline std::vector<std::pair<std::string, std::string>> config_echo(const Scorecard& card)
{
    const auto& c = card.config;
    return {
        {"experiment", card.experiment_id},
        {"control", card.variants.control},
        {"treatment", card.variants.treatment},
        {"alpha", text::format_double(c.alpha)},
        {"loss_threshold", text::format_double(c.loss_threshold)},
        {"scenario_bound", text::format_double(c.scenario_bound)},
        {"bound_kind", c.bound_kind == BoundKind::absolute ? "absolute" : "relative_to_baseline"},
        {"expected_ratio", text::format_double(c.expected_ratio)},
        {"lost_tail_fraction", text::format_double(c.lost_tail_fraction)},
        {"units_ctrl", std::to_string(card.units_ctrl)},
        {"units_trt", std::to_string(card.units_trt)},
        {"srm_statistic", text::format_double(card.srm.statistic)},
        {"srm_p", text::format_double(card.srm.p_value)},
    };
}

inline std::string percent_cell(const ColumnResult& c)
{
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.2f%% (%.2f)", 100.0 * c.relative, c.p_value);
    return buf;
}

inline nlohmann::ordered_json to_json(double v)
{
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline double double_from_json(const nlohmann::json& j)
{
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::ordered_json to_json(const LossEstimate& e)
{
    nlohmann::ordered_json j;
    j["method"] = std::string(to_string(e.method));
    j["events_lost"] = e.events_lost;
    j["expected_events"] = e.expected_events;
    j["units_included"] = e.units_included;
    j["units_total"] = e.units_total;
    j["rate"] = e.rate() ? to_json(*e.rate()) : nlohmann::ordered_json(nullptr);
    return j;
}

inline LossEstimate loss_from_json(const nlohmann::json& j)
{
    const auto method = parse_loss_method(j.at("method").get<std::string>());
    require(method.has_value(), ErrorCode::parse_error, "unknown loss method");
    return LossEstimate{*method, j.at("events_lost").get<std::uint64_t>(),
                        j.at("expected_events").get<std::uint64_t>(), j.at("units_included").get<std::uint64_t>(),
                        j.at("units_total").get<std::uint64_t>()};
}

inline nlohmann::ordered_json to_json(const ColumnResult& c)
{
    nlohmann::ordered_json j;
    j["delta"] = to_json(c.delta);
    j["relative"] = to_json(c.relative);
    j["p_value"] = to_json(c.p_value);
    return j;
}

inline ColumnResult column_from_json(const nlohmann::json& j)
{
    return {double_from_json(j.at("delta")), double_from_json(j.at("relative")),
            double_from_json(j.at("p_value"))};
}

}  // namespace detail

inline constexpr std::string_view kScorecardCsvHeader =
    "metric,observed_delta,observed_rel,observed_p,best_delta,best_p,worst_delta,worst_p,loss_ctrl,loss_trt,flags";

inline void render_scorecard(std::ostream& out, const Scorecard& card, ScorecardFormat format)
{
    if (format == ScorecardFormat::json) {
        nlohmann::ordered_json j;
        j["experiment_id"] = card.experiment_id;
        j["variants"] = {{"control", card.variants.control}, {"treatment", card.variants.treatment}};
        const auto& c = card.config;
        j["config"] = {
            {"alpha", c.alpha},
            {"loss_threshold", c.loss_threshold},
            {"scenario_bound", c.scenario_bound},
            {"bound_kind", c.bound_kind == BoundKind::absolute ? "absolute" : "relative_to_baseline"},
            {"expected_ratio", c.expected_ratio},
            {"lost_tail_fraction", c.lost_tail_fraction},
        };
        j["units"] = {{"control", card.units_ctrl}, {"treatment", card.units_trt}};
        j["srm"] = {{"test", std::string(to_string(card.srm.test))},
                    {"statistic", detail::to_json(card.srm.statistic)},
                    {"p_value", detail::to_json(card.srm.p_value)},
                    {"significant", card.srm.significant}};
        auto loss = nlohmann::ordered_json::array();
        for (const auto& [type, vl] : card.loss) {
            nlohmann::ordered_json row;
            row["event_type"] = type;
            row["control"] = detail::to_json(vl.ctrl);
            row["treatment"] = detail::to_json(vl.trt);
            loss.push_back(std::move(row));
        }
        j["loss"] = std::move(loss);
        auto metrics = nlohmann::ordered_json::array();
        for (const auto& m : card.metrics) {
            nlohmann::ordered_json row;
            row["name"] = m.name;
            row["event_type"] = m.event_type;
            row["observed"] = detail::to_json(m.observed);
            row["best"] = detail::to_json(m.best);
            row["worst"] = detail::to_json(m.worst);
            row["beta_int_best"] = detail::to_json(m.beta_int_best);
            row["beta_int_worst"] = detail::to_json(m.beta_int_worst);
            row["loss_ctrl"] = detail::to_json(m.loss_ctrl);
            row["loss_trt"] = detail::to_json(m.loss_trt);
            row["flags"] = m.flags.to_string();
            row["notes"] = m.notes;
            metrics.push_back(std::move(row));
        }
        j["metrics"] = std::move(metrics);
        out << j.dump(2) << '\n';
        return;
    }

    if (format == ScorecardFormat::csv) {
        for (const auto& [k, v] : detail::config_echo(card)) {
            out << "# " << k << '=' << v << '\n';
        }
        out << kScorecardCsvHeader << '\n';
        for (const auto& m : card.metrics) {
            out << text::join_csv({m.name, text::format_double(m.observed.delta),
                                   text::format_double(m.observed.relative), text::format_double(m.observed.p_value),
                                   text::format_double(m.best.delta), text::format_double(m.best.p_value),
                                   text::format_double(m.worst.delta), text::format_double(m.worst.p_value),
                                   text::format_double(m.loss_ctrl), text::format_double(m.loss_trt),
                                   m.flags.to_string()})
                << '\n';
        }
        return;
    }

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"Metric", "Observed", "Best-case", "Worst-case", "Loss (ctrl/trt)", "Flags"});
    for (const auto& m : card.metrics) {
        char loss[64];
        std::snprintf(loss, sizeof(loss), "%.2f%% / %.2f%%", 100.0 * m.loss_ctrl, 100.0 * m.loss_trt);
        rows.push_back({m.name, detail::percent_cell(m.observed), detail::percent_cell(m.best),
                        detail::percent_cell(m.worst), loss, m.flags.to_string()});
    }
    std::vector<std::size_t> width(rows.front().size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    for (const auto& [k, v] : detail::config_echo(card)) {
        out << "# " << k << '=' << v << '\n';
    }
    out << "Relative Delta (P.Value)\n";
    auto rule = [&] {
        std::size_t total = 0;
        for (auto w : width) {
            total += w + 3;
        }
        out << std::string(total > 3 ? total - 3 : total, '-') << '\n';
    };
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (r <= 1) {
            rule();
        }
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            if (c) {
                out << " | ";
            }
            out << rows[r][c];
            if (c + 1 < rows[r].size()) {
                out << std::string(width[c] - rows[r][c].size(), ' ');
            }
        }
        out << '\n';
    }
    rule();
}

inline std::string render_scorecard(const Scorecard& card, ScorecardFormat format)
{
    std::ostringstream out;
    render_scorecard(out, card, format);
    return out.str();
}

/// Inverse of the JSON rendering.
inline Scorecard scorecard_from_json(std::string_view json_text)
{
    const auto j = nlohmann::json::parse(json_text, nullptr, false);
    require(!j.is_discarded() && j.is_object(), ErrorCode::parse_error, "scorecard JSON is malformed");
    try {
        Scorecard card;
        card.experiment_id = j.at("experiment_id").get<std::string>();
        card.variants.control = j.at("variants").at("control").get<std::string>();
        card.variants.treatment = j.at("variants").at("treatment").get<std::string>();
        const auto& c = j.at("config");
        card.config.alpha = c.at("alpha").get<double>();
        card.config.loss_threshold = c.at("loss_threshold").get<double>();
        card.config.scenario_bound = c.at("scenario_bound").get<double>();
        card.config.bound_kind = c.at("bound_kind").get<std::string>() == "absolute"
                                     ? BoundKind::absolute
                                     : BoundKind::relative_to_baseline;
        card.config.expected_ratio = c.at("expected_ratio").get<double>();
        card.config.lost_tail_fraction = c.at("lost_tail_fraction").get<double>();
        card.units_ctrl = j.at("units").at("control").get<std::uint64_t>();
        card.units_trt = j.at("units").at("treatment").get<std::uint64_t>();
        const auto& srm = j.at("srm");
        card.srm.test = TestKind::chi_square_srm;
        card.srm.statistic = detail::double_from_json(srm.at("statistic"));
        card.srm.p_value = detail::double_from_json(srm.at("p_value"));
        card.srm.significant = srm.at("significant").get<bool>();
        for (const auto& row : j.at("loss")) {
            card.loss[row.at("event_type").get<std::string>()] =
                VariantLoss{detail::loss_from_json(row.at("control")), detail::loss_from_json(row.at("treatment"))};
        }
        for (const auto& row : j.at("metrics")) {
            MetricResult m;
            m.name = row.at("name").get<std::string>();
            m.event_type = row.at("event_type").get<std::string>();
            m.observed = detail::column_from_json(row.at("observed"));
            m.best = detail::column_from_json(row.at("best"));
            m.worst = detail::column_from_json(row.at("worst"));
            m.beta_int_best = detail::double_from_json(row.at("beta_int_best"));
            m.beta_int_worst = detail::double_from_json(row.at("beta_int_worst"));
            m.loss_ctrl = detail::double_from_json(row.at("loss_ctrl"));
            m.loss_trt = detail::double_from_json(row.at("loss_trt"));
            const auto flags = FlagSet::parse(row.at("flags").get<std::string>());
            require(flags.has_value(), ErrorCode::parse_error, "unknown flag in scorecard JSON");
            m.flags = *flags;
            m.notes = row.at("notes").get<std::vector<std::string>>();
            card.metrics.push_back(std::move(m));
        }
        return card;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse_error, std::string("scorecard JSON: ") + e.what());
    }
}

/// One parsed scorecard CSV row; relative deltas of the simulated columns
/// are not part of the CSV layout.
struct ScorecardCsvRow {
    std::string metric;
    double observed_delta = 0.0;
    double observed_rel = 0.0;
    double observed_p = 0.0;
    double best_delta = 0.0;
    double best_p = 0.0;
    double worst_delta = 0.0;
    double worst_p = 0.0;
    double loss_ctrl = 0.0;
    double loss_trt = 0.0;
    FlagSet flags;

    bool operator==(const ScorecardCsvRow&) const = default;
};

struct ScorecardCsv {
    std::vector<std::pair<std::string, std::string>> echo;
    std::vector<ScorecardCsvRow> rows;
};

inline ScorecardCsv read_scorecard_csv(std::istream& in)
{
    ScorecardCsv out;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.starts_with("# ")) {
            const auto eq = line.find('=');
            require(eq != std::string::npos, ErrorCode::parse_error, "bad scorecard echo line");
            out.echo.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
            continue;
        }
        if (text::trim(line).empty()) {
            continue;
        }
        if (!header) {
            require(text::trim(line) == kScorecardCsvHeader, ErrorCode::parse_error, "unexpected scorecard header");
            header = true;
            continue;
        }
        const auto cells = text::split_csv(line);
        require(cells && cells->size() == 11, ErrorCode::parse_error, "scorecard row needs 11 fields");
        ScorecardCsvRow r;
        r.metric = (*cells)[0];
        double* targets[] = {&r.observed_delta, &r.observed_rel, &r.observed_p, &r.best_delta, &r.best_p,
                             &r.worst_delta, &r.worst_p, &r.loss_ctrl, &r.loss_trt};
        for (std::size_t i = 0; i < std::size(targets); ++i) {
            const auto v = text::parse_double((*cells)[i + 1]);
            require(v.has_value(), ErrorCode::parse_error, "bad number in scorecard row");
            *targets[i] = *v;
        }
        const auto flags = FlagSet::parse((*cells)[10]);
        require(flags.has_value(), ErrorCode::parse_error, "unknown flag in scorecard row");
        r.flags = *flags;
        out.rows.push_back(std::move(r));
    }
    return out;
}

}  // namespace telemloss
