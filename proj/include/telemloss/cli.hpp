#pragma once

#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "telemloss/config.hpp"
#include "telemloss/error.hpp"
#include "telemloss/event_model.hpp"
#include "telemloss/loss_estimation.hpp"
#include "telemloss/scorecard.hpp"
#include "telemloss/simulation.hpp"
#include "telemloss/synthgen.hpp"
#include "telemloss/text.hpp"

// Subcommand implementations behind tools/telemloss. Each command reads and
// writes files, echoes its parameters as "# key=value" lines into every
// output, and reports failures by throwing telemloss::Error.
namespace telemloss::cli {

using Echo = std::vector<std::pair<std::string, std::string>>;

enum ExitCode : int { kSuccess = 0, kInputError = 1, kStatisticalGuard = 2 };

/// Runs a command and maps its failure to an exit code, printing the reason.
inline int run_command(const std::function<void()>& command, std::ostream& err = std::cerr)
{
    try {
        command();
        return kSuccess;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.is_statistical_guard() ? kStatisticalGuard : kInputError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    }
}

namespace detail {

inline std::ifstream open_input(const std::string& path, std::string_view what)
{
    require(!path.empty(), ErrorCode::invalid_argument, std::string(what) + " path is required");
    std::ifstream in(path, std::ios::binary);
    require(in.is_open(), ErrorCode::unreadable_stream, "cannot open " + std::string(what) + " '" + path + "'");
    return in;
}

/// Writes through `body` to `path`, or to stdout when the path is empty or "-".
inline void with_output(const std::string& path, const std::function<void(std::ostream&)>& body)
{
    if (path.empty() || path == "-") {
        body(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.is_open(), ErrorCode::unreadable_stream, "cannot write '" + path + "'");
    body(out);
    out.flush();
    require(static_cast<bool>(out), ErrorCode::unreadable_stream, "write to '" + path + "' failed");
}

inline void write_echo(std::ostream& out, std::string_view command, const Echo& echo)
{
    out << "# telemloss " << command << '\n';
    for (const auto& [k, v] : echo) {
        out << "# " << k << '=' << v << '\n';
    }
}

inline LogFormat resolve_format(const std::string& path, const std::optional<LogFormat>& explicit_format)
{
    if (explicit_format) {
        return *explicit_format;
    }
    return path.ends_with(".csv") ? LogFormat::csv : LogFormat::jsonl;
}

inline EventLog read_log(const std::string& path, const std::optional<LogFormat>& format, double max_bad_ratio)
{
    auto in = open_input(path, "event log");
    ParseOptions opts;
    opts.source = path;
    opts.max_bad_row_ratio = max_bad_ratio;
    return parse_event_log(in, resolve_format(path, format), opts);
}

inline std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

/// Synthetic population spec from a key=value file:
///   n_endpoints, sessions (fixed:K | geometric:P | zipf:S[:MAX]),
///   allocation_ratio, event_types (NAME[:TIER[:SAMPLE_RATE]], comma list),
///   metric.NAME = EVENT_TYPE,MEAN,SD[,EFFECT[,INTERACTION[,POOR_QUANTILE]]],
///   server_event_type, server_events, reset_probability, control, treatment,
///   start_ts, seed.
inline synth::SynthSpec synth_spec_from_config(const KeyValueConfig& cfg)
{
    cfg.require_known({"n_endpoints", "sessions", "allocation_ratio", "event_types", "server_event_type",
                       "server_events", "reset_probability", "control", "treatment", "start_ts", "seed"},
                      {"metric."});
    synth::SynthSpec spec;
    spec.n_endpoints = cfg.count_or("n_endpoints", spec.n_endpoints);
    if (const auto s = cfg.get("sessions")) {
        const auto parsed = synth::SessionCount::parse(*s);
        require(parsed.has_value(), ErrorCode::invalid_spec, "cannot parse sessions '" + *s + "'");
        spec.sessions = *parsed;
    }
    spec.allocation_ratio = cfg.number_or("allocation_ratio", spec.allocation_ratio);
    if (const auto types = cfg.get("event_types")) {
        spec.event_types.clear();
        std::string_view rest = *types;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item = text::trim(rest.substr(0, comma));
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
            if (item.empty()) {
                continue;
            }
            synth::EventTypeSpec t;
            const auto c1 = item.find(':');
            t.name = std::string(item.substr(0, c1));
            if (c1 != std::string_view::npos) {
                const auto more = item.substr(c1 + 1);
                const auto c2 = more.find(':');
                const auto tier = text::parse_int<int>(more.substr(0, c2));
                require(tier.has_value(), ErrorCode::invalid_spec, "bad priority tier in '" + std::string(item) + "'");
                t.priority_tier = *tier;
                if (c2 != std::string_view::npos) {
                    const auto rate = text::parse_double(more.substr(c2 + 1));
                    require(rate.has_value(), ErrorCode::invalid_spec, "bad sample rate in '" + std::string(item) + "'");
                    t.sample_rate = *rate;
                }
            }
            spec.event_types.push_back(std::move(t));
        }
    }
    for (const auto& [name, value] : cfg.with_prefix("metric.")) {
        const auto cells = text::split_csv(value);
        require(cells && cells->size() >= 3 && cells->size() <= 6, ErrorCode::invalid_spec,
                "metric." + name + " needs EVENT_TYPE,MEAN,SD[,EFFECT[,INTERACTION[,POOR_QUANTILE]]]");
        synth::MetricModel m;
        m.name = name;
        m.event_type = std::string(text::trim((*cells)[0]));
        std::vector<double> nums;
        for (std::size_t i = 1; i < cells->size(); ++i) {
            const auto d = text::parse_double(text::trim((*cells)[i]));
            require(d.has_value(), ErrorCode::invalid_spec, "metric." + name + ": '" + (*cells)[i] + "' is not a number");
            nums.push_back(*d);
        }
        m.baseline_mean = nums[0];
        m.baseline_sd = nums[1];
        if (nums.size() > 2) m.treatment_effect = nums[2];
        if (nums.size() > 3) m.interaction = nums[3];
        if (nums.size() > 4) m.poor_quantile = nums[4];
        spec.metrics.push_back(std::move(m));
    }
    spec.server_event_type = cfg.string_or("server_event_type", spec.server_event_type);
    if (const auto v = cfg.get("server_events")) {
        require(*v == "true" || *v == "false", ErrorCode::invalid_spec, "server_events must be true or false");
        spec.server_events = *v == "true";
    }
    spec.reset_probability = cfg.number_or("reset_probability", spec.reset_probability);
    spec.control_label = cfg.string_or("control", spec.control_label);
    spec.treatment_label = cfg.string_or("treatment", spec.treatment_label);
    if (const auto v = cfg.get("start_ts")) {
        const auto ts = text::parse_int<std::int64_t>(*v);
        require(ts.has_value(), ErrorCode::invalid_spec, "start_ts must be an integer");
        spec.start_ts = *ts;
    }
    spec.seed = cfg.count_or("seed", spec.seed);
    spec.validate();
    return spec;
}

inline Echo synth_echo(const synth::SynthSpec& spec)
{
    Echo e{{"n_endpoints", std::to_string(spec.n_endpoints)},
           {"sessions", spec.sessions.to_string()},
           {"allocation_ratio", text::format_double(spec.allocation_ratio)}};
    std::string types;
    for (const auto& t : spec.event_types) {
        types += (types.empty() ? "" : ",") + t.name + ":" + std::to_string(t.priority_tier) + ":" +
                 text::format_double(t.sample_rate);
    }
    e.emplace_back("event_types", types);
    for (const auto& m : spec.metrics) {
        e.emplace_back("metric." + m.name,
                       m.event_type + "," + text::format_double(m.baseline_mean) + "," +
                           text::format_double(m.baseline_sd) + "," + text::format_double(m.treatment_effect) +
                           "," + text::format_double(m.interaction) + "," + text::format_double(m.poor_quantile));
    }
    e.emplace_back("server_event_type", spec.server_event_type);
    e.emplace_back("server_events", detail::bool_text(spec.server_events));
    e.emplace_back("reset_probability", text::format_double(spec.reset_probability));
    e.emplace_back("control", spec.control_label);
    e.emplace_back("treatment", spec.treatment_label);
    e.emplace_back("start_ts", std::to_string(spec.start_ts));
    e.emplace_back("seed", std::to_string(spec.seed));
    return e;
}

struct SynthOptions {
    std::string config;  // optional: defaults apply when empty
    std::optional<std::uint64_t> seed;
    std::string output;
    std::string truth_output;
    std::optional<LogFormat> format;
};

inline void cmd_synth(const SynthOptions& opt)
{
    KeyValueConfig cfg;
    if (!opt.config.empty()) {
        auto in = detail::open_input(opt.config, "synth config");
        cfg = KeyValueConfig::parse(in, opt.config);
    }
    auto spec = synth_spec_from_config(cfg);
    if (opt.seed) {
        spec.seed = *opt.seed;
    }
    const auto pop = synth::generate_population(spec);
    const auto echo = synth_echo(spec);
    const auto format = detail::resolve_format(opt.output, opt.format);
    detail::with_output(opt.output, [&](std::ostream& out) {
        detail::write_echo(out, "synth", echo);
        write_event_log(out, pop.log.events, format);
    });
    if (!opt.truth_output.empty()) {
        detail::with_output(opt.truth_output,
                            [&](std::ostream& out) { synth::write_ground_truth(out, pop.truth, echo); });
    }
}

// ---------------------------------------------------------------------------
// apply-loss

struct ApplyLossOptions {
    std::string input;
    std::string truth_input;  // optional sidecar of the full log
    std::vector<std::string> mechanisms;
    std::uint64_t seed = 1;
    std::string output;
    std::string truth_output;
    std::optional<LogFormat> format;
    std::string treatment = "treatment";
};

inline void cmd_apply_loss(const ApplyLossOptions& opt)
{
    std::vector<synth::LossMechanism> mechanisms;
    for (const auto& m : opt.mechanisms) {
        const auto parsed = synth::LossMechanism::parse(m);
        require(parsed.has_value(), ErrorCode::invalid_spec, "cannot parse loss mechanism '" + m + "'");
        mechanisms.push_back(*parsed);
    }
    synth::Population full;
    full.log = detail::read_log(opt.input, opt.format, 0.0);
    if (!opt.truth_input.empty()) {
        auto in = detail::open_input(opt.truth_input, "ground truth");
        full.truth = synth::read_ground_truth(in);
    } else {
        full.truth.treatment_label = opt.treatment;
    }
    const auto observed = synth::apply_loss(full, mechanisms, opt.seed);

    Echo echo{{"seed", std::to_string(opt.seed)}, {"treatment", observed.truth.treatment_label}};
    for (std::size_t i = 0; i < opt.mechanisms.size(); ++i) {
        echo.emplace_back("mechanism." + std::to_string(i), opt.mechanisms[i]);
    }
    const auto format = detail::resolve_format(opt.output, opt.format);
    detail::with_output(opt.output, [&](std::ostream& out) {
        detail::write_echo(out, "apply-loss", echo);
        write_event_log(out, observed.log.events, format);
    });
    if (!opt.truth_output.empty()) {
        detail::with_output(opt.truth_output,
                            [&](std::ostream& out) { synth::write_ground_truth(out, observed.truth, echo); });
    }
}

// ---------------------------------------------------------------------------
// estimate-loss

struct EstimateLossOptions {
    std::string input;         // client events (or a mixed log)
    std::string server_input;  // server events; defaults to those in `input`
    LossMethod method = LossMethod::anchor;
    std::uint64_t min_sequence_size = kDefaultMinSequenceSize;
    std::vector<std::string> event_types;
    std::uint64_t reset_divisor = 2;
    double max_bad_row_ratio = 0.01;
    std::string output;
    std::optional<LogFormat> format;
};

inline std::vector<LossReportRow> estimate_loss(const EstimateLossOptions& opt)
{
    const auto log = detail::read_log(opt.input, opt.format, opt.max_bad_row_ratio);
    auto [client, server] = split_by_source(log);
    if (opt.method == LossMethod::anchor) {
        if (!opt.server_input.empty()) {
            const auto server_log = detail::read_log(opt.server_input, opt.format, opt.max_bad_row_ratio);
            server = split_by_source(server_log).second;
        }
        return anchor_report(client, server, AnchorOptions{opt.event_types});
    }
    require(opt.reset_divisor >= 1, ErrorCode::invalid_argument, "reset divisor must be >= 1");
    auto sequences = build_sequences(client.events, ResetPolicy{opt.reset_divisor});
    if (!opt.event_types.empty()) {
        const std::set<std::string> keep(opt.event_types.begin(), opt.event_types.end());
        std::erase_if(sequences, [&](const Sequence& s) { return !keep.contains(s.event_type); });
    }
    require(!sequences.empty(), ErrorCode::no_expected_events,
            "no sequences meet minimum size " + std::to_string(opt.min_sequence_size));
    return sequence_report(sequences, opt.min_sequence_size);
}

inline void cmd_estimate_loss(const EstimateLossOptions& opt)
{
    const auto rows = estimate_loss(opt);
    Echo echo{{"method", std::string(to_string(opt.method))}};
    if (opt.method == LossMethod::sequence) {
        echo.emplace_back("min_sequence_size", std::to_string(opt.min_sequence_size));
        echo.emplace_back("reset_divisor", std::to_string(opt.reset_divisor));
    }
    std::string types;
    for (const auto& t : opt.event_types) {
        types += (types.empty() ? "" : ",") + t;
    }
    echo.emplace_back("event_types", types.empty() ? "*" : types);
    detail::with_output(opt.output, [&](std::ostream& out) {
        detail::write_echo(out, "estimate-loss", echo);
        write_loss_report(out, rows);
    });
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateInput {
    ObservedArm ctrl;
    ObservedArm trt;
    double lost_mean_ctrl = 0.0;
    double lost_sd_ctrl = 0.0;
    std::optional<double> lost_sd_trt;
    std::vector<double> beta_int{0.0};
    double alpha = kDefaultAlpha;
};

/// Keys: mean_ctrl, var_ctrl, n_ctrl, mean_trt, var_trt, n_trt, loss_ctrl,
/// loss_trt, lost_mean_ctrl, lost_sd_ctrl, [lost_sd_trt], beta_int (comma
/// list), [alpha].
inline SimulateInput simulate_input_from_config(const KeyValueConfig& cfg)
{
    cfg.require_known({"mean_ctrl", "var_ctrl", "n_ctrl", "mean_trt", "var_trt", "n_trt", "loss_ctrl", "loss_trt",
                       "lost_mean_ctrl", "lost_sd_ctrl", "lost_sd_trt", "beta_int", "alpha"});
    SimulateInput s;
    s.ctrl = {cfg.count("n_ctrl"), cfg.number("mean_ctrl"), cfg.number("var_ctrl"), cfg.number_or("loss_ctrl", 0.0)};
    s.trt = {cfg.count("n_trt"), cfg.number("mean_trt"), cfg.number("var_trt"), cfg.number_or("loss_trt", 0.0)};
    s.lost_mean_ctrl = cfg.number_or("lost_mean_ctrl", s.ctrl.mean);
    s.lost_sd_ctrl = cfg.number_or("lost_sd_ctrl", std::sqrt(std::max(s.ctrl.variance, 0.0)));
    s.lost_sd_trt = cfg.optional_number("lost_sd_trt");
    if (cfg.has("beta_int")) {
        s.beta_int = cfg.numbers("beta_int");
    }
    s.alpha = cfg.number_or("alpha", kDefaultAlpha);
    return s;
}

struct SimulateOptions {
    std::string config;
    std::optional<double> alpha;
    std::string output;
};

inline constexpr std::string_view kSimulateHeader =
    "beta_int,observed_delta,delta,relative_delta,se,z,p_value,significant,lost_mean_trt,full_mean_ctrl,"
    "full_mean_trt,full_variance_ctrl,full_variance_trt";

inline void cmd_simulate(const SimulateOptions& opt)
{
    auto in = detail::open_input(opt.config, "simulation config");
    const auto cfg = KeyValueConfig::parse(in, opt.config);
    auto input = simulate_input_from_config(cfg);
    if (opt.alpha) {
        input.alpha = *opt.alpha;
    }
    require(input.alpha > 0.0 && input.alpha < 1.0, ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
    std::vector<SimulatedResult> results;
    for (double b : input.beta_int) {
        results.push_back(simulate_treatment_effect(
            input.ctrl, input.trt, LossScenario{input.lost_mean_ctrl, input.lost_sd_ctrl, b, input.lost_sd_trt}));
    }
    auto echo = cfg.entries();
    std::erase_if(echo, [](const auto& kv) { return kv.first == "alpha"; });
    echo.emplace_back("alpha", text::format_double(input.alpha));
    detail::with_output(opt.output, [&](std::ostream& out) {
        detail::write_echo(out, "simulate", echo);
        out << kSimulateHeader << '\n';
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& r = results[i];
            out << text::join_csv({text::format_double(input.beta_int[i]), text::format_double(r.observed_delta),
                                   text::format_double(r.delta), text::format_double(r.relative_delta()),
                                   text::format_double(r.se), text::format_double(r.z),
                                   text::format_double(r.p_value), detail::bool_text(r.p_value < input.alpha),
                                   text::format_double(r.lost_mean_trt), text::format_double(r.full_mean_ctrl),
                                   text::format_double(r.full_mean_trt), text::format_double(r.full_variance_ctrl),
                                   text::format_double(r.full_variance_trt)})
                << '\n';
        }
    });
}

// ---------------------------------------------------------------------------
// tolerance-grid

struct GridInput {
    PlatformProfile profile;
    std::vector<double> l_values;
    std::vector<double> delta2_values;
    double alpha = kDefaultAlpha;
};

/// Keys: mean, var (observed control; treatment mirrors it unless var_trt),
/// n or n_ctrl/n_trt, lost_mean_ctrl, lost_sd_ctrl, [lost_sd_trt], l_max,
/// l_steps, delta2_max, delta2_steps, alpha. Missing range keys take the
/// defaults: l in [0, 0.20] and delta'' up to min(30% of mean, 50% of sd).
inline GridInput grid_input_from_config(const KeyValueConfig& cfg)
{
    cfg.require_known({"name", "mean", "var", "var_trt", "n", "n_ctrl", "n_trt", "lost_mean_ctrl", "lost_sd_ctrl",
                       "lost_sd_trt", "l_max", "l_steps", "delta2_max", "delta2_steps", "alpha"});
    GridInput g;
    const double mean = cfg.number("mean");
    const double var = cfg.number("var");
    require(var >= 0.0, ErrorCode::invalid_argument, "var must be non-negative");
    const auto n = cfg.count_or("n", 0);
    const auto n_ctrl = cfg.count_or("n_ctrl", n);
    const auto n_trt = cfg.count_or("n_trt", n);
    require(n_ctrl > 1 && n_trt > 1, ErrorCode::invalid_argument, "grid needs n (or n_ctrl/n_trt) > 1");
    g.profile.ctrl = {n_ctrl, mean, var, 0.0};
    g.profile.trt = {n_trt, mean, cfg.number_or("var_trt", var), 0.0};
    g.profile.lost_mean_ctrl = cfg.number("lost_mean_ctrl");
    g.profile.lost_sd_ctrl = cfg.number("lost_sd_ctrl");
    g.profile.lost_sd_trt = cfg.optional_number("lost_sd_trt");

    const double l_max = cfg.number_or("l_max", kDefaultMaxLoss);
    const auto l_steps = cfg.count_or("l_steps", 21);
    const double d2_max = cfg.number_or("delta2_max", std::min(0.3 * std::fabs(mean), 0.5 * std::sqrt(var)));
    const auto d2_steps = cfg.count_or("delta2_steps", 21);
    require(l_steps >= 1 && d2_steps >= 1, ErrorCode::invalid_argument, "grid steps must be >= 1");
    require(std::isfinite(l_max) && l_max >= 0.0 && l_max < 1.0, ErrorCode::invalid_argument,
            "l_max must lie in [0, 1)");
    require(l_steps == 1 || l_max > 0.0, ErrorCode::invalid_argument, "l_max must be positive for more than one step");
    require(std::isfinite(d2_max) && d2_max >= 0.0, ErrorCode::invalid_argument, "delta2_max must be non-negative");
    require(d2_steps == 1 || d2_max > 0.0, ErrorCode::invalid_argument,
            "delta2_max must be positive for more than one step");
    g.l_values = linspace(0.0, l_max, l_steps);
    g.delta2_values = linspace(0.0, d2_max, d2_steps);
    g.alpha = cfg.number_or("alpha", kDefaultAlpha);
    return g;
}

struct ToleranceGridOptions {
    std::string config;
    std::optional<double> alpha;
    std::string output;
};

inline ToleranceGrid run_tolerance_grid(const GridInput& g)
{
    return tolerance_grid(g.profile, g.l_values, g.delta2_values, g.alpha);
}

inline void cmd_tolerance_grid(const ToleranceGridOptions& opt)
{
    auto in = detail::open_input(opt.config, "platform profile");
    const auto cfg = KeyValueConfig::parse(in, opt.config);
    auto input = grid_input_from_config(cfg);
    if (opt.alpha) {
        input.alpha = *opt.alpha;
    }
    const auto grid = run_tolerance_grid(input);
    auto echo = cfg.entries();
    std::erase_if(echo, [](const auto& kv) { return kv.first == "alpha"; });
    echo.emplace_back("alpha", text::format_double(input.alpha));
    echo.emplace_back("safe_cells", std::to_string(grid.safe_count()) + "/" +
                                        std::to_string(grid.l_values.size() * grid.delta2_values.size()));
    for (const auto& note : grid.notes) {
        echo.emplace_back("note", note);
    }
    detail::with_output(opt.output, [&](std::ostream& out) {
        detail::write_echo(out, "tolerance-grid", echo);
        out << "l,delta2,p,safe\n";
        for (std::size_t i = 0; i < grid.l_values.size(); ++i) {
            for (std::size_t j = 0; j < grid.delta2_values.size(); ++j) {
                out << text::format_double(grid.l_values[i]) << ',' << text::format_double(grid.delta2_values[j])
                    << ',' << text::format_double(grid.p[i][j]) << ',' << detail::bool_text(grid.safe[i][j])
                    << '\n';
            }
        }
    });
}

// ---------------------------------------------------------------------------
// scorecard

struct ScorecardOptions {
    std::string input;         // mixed client/server log
    std::string server_input;  // optional separate server log
    std::string metrics;
    std::string loss_report;   // optional: anchor estimates are computed when empty
    ScorecardFormat format = ScorecardFormat::text_table;
    std::optional<LogFormat> log_format;
    ScorecardConfig config;
    std::string experiment_id;
    VariantPair variants;
    double max_bad_row_ratio = 0.01;
    std::string output;
};

inline Scorecard make_scorecard(const ScorecardOptions& opt)
{
    const auto log = detail::read_log(opt.input, opt.log_format, opt.max_bad_row_ratio);
    auto [client, server] = split_by_source(log);
    if (!opt.server_input.empty()) {
        server = split_by_source(detail::read_log(opt.server_input, opt.log_format, opt.max_bad_row_ratio)).second;
    }
    auto metrics_in = detail::open_input(opt.metrics, "metric definitions");
    const auto metrics = read_metric_definitions(metrics_in);

    std::vector<LossReportRow> rows;
    if (opt.loss_report.empty()) {
        rows = anchor_report(client, server);
    } else {
        auto in = detail::open_input(opt.loss_report, "loss report");
        rows = read_loss_report(in);
    }
    const auto joined = join_sessions(client, server);
    return build_scorecard(joined.records, metrics, variant_losses(rows, opt.variants), opt.config,
                           opt.experiment_id, opt.variants);
}

inline void cmd_scorecard(const ScorecardOptions& opt)
{
    const auto card = make_scorecard(opt);
    detail::with_output(opt.output, [&](std::ostream& out) { render_scorecard(out, card, opt.format); });
}

}  // namespace telemloss::cli
