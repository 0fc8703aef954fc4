#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "telemloss/cli.hpp"

namespace {

using namespace telemloss;

const std::map<std::string, LogFormat> kLogFormats{{"jsonl", LogFormat::jsonl}, {"csv", LogFormat::csv}};
const std::map<std::string, ScorecardFormat> kScorecardFormats{
    {"text", ScorecardFormat::text_table}, {"csv", ScorecardFormat::csv}, {"json", ScorecardFormat::json}};
const std::map<std::string, LossMethod> kMethods{{"anchor", LossMethod::anchor}, {"sequence", LossMethod::sequence}};
const std::map<std::string, BoundKind> kBoundKinds{{"relative", BoundKind::relative_to_baseline},
                                                   {"absolute", BoundKind::absolute}};

// Choice options are read as text and mapped after parsing.
template <typename T>
CLI::Option* add_choice(CLI::App* app, const std::string& name, const std::map<std::string, T>& choices,
                        const std::string& help, std::function<void(T)> assign)
{
    auto* opt = app->add_option_function<std::string>(
        name, [&choices, assign](const std::string& v) { assign(choices.at(v)); }, help);
    return opt->check(CLI::IsMember(choices));
}

void add_log_format(CLI::App* app, std::optional<LogFormat>& target)
{
    add_choice<LogFormat>(app, "--format", kLogFormats, "Event log format (default: from extension, else jsonl)",
                          [&target](LogFormat f) { target = f; });
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Measure telemetry loss and its effect on A/B experiment results"};
    app.require_subcommand(1);
    std::function<void()> command;

    cli::SynthOptions synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic client/server event log with ground truth");
    s->add_option("--config", synth.config, "Population spec (key = value)")->check(CLI::ExistingFile);
    s->add_option("--seed", synth.seed, "Override the spec seed");
    s->add_option("--output,-o", synth.output, "Event log path ('-' for stdout)");
    s->add_option("--truth", synth.truth_output, "Ground-truth sidecar path (JSON)");
    add_log_format(s, synth.format);
    s->callback([&] { command = [&] { cli::cmd_synth(synth); }; });

    cli::ApplyLossOptions loss;
    auto* a = app.add_subcommand("apply-loss", "Drop client events from a synthetic log");
    a->add_option("--input,-i", loss.input, "Full event log")->required();
    a->add_option("--truth-input", loss.truth_input, "Sidecar of the full log");
    a->add_option("--mechanism,-m", loss.mechanisms,
                  "mar:TYPE:P | treatment_correlated:TYPE:P_CTRL:P_TRT | "
                  "outcome_correlated:TYPE:MEASURE:P_LOW:P_HIGH:CUT[:lower|upper] | "
                  "crash_strata:TYPE:MEASURE:CUT[:lower|upper]");
    a->add_option("--seed", loss.seed, "Loss seed");
    a->add_option("--output,-o", loss.output, "Observed event log path");
    a->add_option("--truth", loss.truth_output, "Ground-truth sidecar path (JSON)");
    a->add_option("--treatment", loss.treatment, "Treatment label when no sidecar is given");
    add_log_format(a, loss.format);
    a->callback([&] { command = [&] { cli::cmd_apply_loss(loss); }; });

    cli::EstimateLossOptions est;
    auto* e = app.add_subcommand("estimate-loss", "Estimate loss rates with the anchor or sequence method");
    e->add_option("--input,-i", est.input, "Event log (client events, or mixed)")->required();
    e->add_option("--server-input", est.server_input, "Separate server event log");
    add_choice<LossMethod>(e, "--method", kMethods, "anchor | sequence", [&](LossMethod v) { est.method = v; });
    e->add_option("--min-sequence-size", est.min_sequence_size, "Shortest sequence span counted");
    e->add_option("--reset-divisor", est.reset_divisor, "Counter reset when sn <= prev - prev/DIVISOR");
    e->add_option("--event-type", est.event_types, "Restrict to these event types");
    e->add_option("--max-bad-row-ratio", est.max_bad_row_ratio, "Tolerated malformed row fraction");
    e->add_option("--output,-o", est.output, "Loss report CSV path");
    add_log_format(e, est.format);
    e->callback([&] { command = [&] { cli::cmd_estimate_loss(est); }; });

    cli::SimulateOptions sim;
    auto* m = app.add_subcommand("simulate", "Simulate the no-loss treatment effect from summary statistics");
    m->add_option("--input,-i,--config", sim.config, "Summary statistics (key = value)")->required();
    m->add_option("--alpha", sim.alpha, "Significance level");
    m->add_option("--output,-o", sim.output, "Result CSV path");
    m->callback([&] { command = [&] { cli::cmd_simulate(sim); }; });

    cli::ToleranceGridOptions grid;
    auto* g = app.add_subcommand("tolerance-grid", "Map the loss-rate / delta'' safe zone of a platform profile");
    g->add_option("--input,-i,--config", grid.config, "Platform profile (key = value)")->required();
    g->add_option("--alpha", grid.alpha, "Significance level");
    g->add_option("--output,-o", grid.output, "Grid CSV path");
    g->callback([&] { command = [&] { cli::cmd_tolerance_grid(grid); }; });

    cli::ScorecardOptions card;
    auto* c = app.add_subcommand("scorecard", "Build an experiment scorecard with observed and simulated columns");
    c->add_option("--input,-i", card.input, "Event log (client and server events)")->required();
    c->add_option("--server-input", card.server_input, "Separate server event log");
    c->add_option("--metrics", card.metrics, "Metric definitions CSV")->required();
    c->add_option("--loss-report", card.loss_report, "Loss report from estimate-loss (default: anchor)");
    add_choice<ScorecardFormat>(c, "--format", kScorecardFormats, "text | csv | json",
                                [&](ScorecardFormat v) { card.format = v; });
    add_choice<LogFormat>(c, "--log-format", kLogFormats, "Event log format",
                          [&](LogFormat v) { card.log_format = v; });
    c->add_option("--alpha", card.config.alpha, "Significance level");
    c->add_option("--loss-threshold", card.config.loss_threshold, "HIGH_LOSS threshold");
    c->add_option("--scenario-bound", card.config.scenario_bound, "|beta_int| of the best/worst-case columns");
    add_choice<BoundKind>(c, "--bound-kind", kBoundKinds, "relative (to the control mean) | absolute",
                          [&](BoundKind v) { card.config.bound_kind = v; });
    c->add_option("--expected-ratio", card.config.expected_ratio, "Allocation control:treatment");
    c->add_option("--experiment", card.experiment_id, "Experiment id");
    c->add_option("--control", card.variants.control, "Control label");
    c->add_option("--treatment", card.variants.treatment, "Treatment label");
    c->add_option("--output,-o", card.output, "Scorecard path");
    c->callback([&] { command = [&] { cli::cmd_scorecard(card); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : cli::kInputError;
    }
    return cli::run_command(command);
}
