#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <ranges>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "telemloss/error.hpp"
#include "telemloss/event_model.hpp"
#include "telemloss/text.hpp"

namespace telemloss {

enum class LossMethod { anchor, sequence };

constexpr std::string_view to_string(LossMethod m) noexcept
{
    return m == LossMethod::anchor ? "anchor" : "sequence";
}

inline std::optional<LossMethod> parse_loss_method(std::string_view s) noexcept
{
    if (s == "anchor") {
        return LossMethod::anchor;
    }
    if (s == "sequence") {
        return LossMethod::sequence;
    }
    return std::nullopt;
}

/// Lost and expected event counts. The rate is always re-derived from the
/// counts so estimates from different partitions merge exactly.
struct LossEstimate {
    LossMethod method = LossMethod::anchor;
    std::uint64_t events_lost = 0;
    std::uint64_t expected_events = 0;
    std::uint64_t units_included = 0;  // legs or sequences that contributed
    std::uint64_t units_total = 0;     // legs or sequences offered

    static LossEstimate zero(LossMethod m) { return LossEstimate{.method = m}; }

    std::optional<double> rate() const
    {
        if (expected_events == 0) {
            return std::nullopt;
        }
        return static_cast<double>(events_lost) / static_cast<double>(expected_events);
    }

    double coverage() const
    {
        return units_total == 0 ? 0.0
                                : static_cast<double>(units_included) / static_cast<double>(units_total);
    }

    bool operator==(const LossEstimate&) const = default;
};

inline LossEstimate merge_loss_estimates(const LossEstimate& a, const LossEstimate& b)
{
    require(a.method == b.method, ErrorCode::method_mismatch,
            "cannot merge " + std::string(to_string(a.method)) + " and " +
                std::string(to_string(b.method)) + " estimates");
    return LossEstimate{
        .method = a.method,
        .events_lost = a.events_lost + b.events_lost,
        .expected_events = a.expected_events + b.expected_events,
        .units_included = a.units_included + b.units_included,
        .units_total = a.units_total + b.units_total,
    };
}

// ---------------------------------------------------------------------------
// Anchor method

/// Loss of client legs against the server's record of the same legs. Client
/// legs the server never saw carry no information and are not counted.
template <std::ranges::input_range ServerLegs, std::ranges::input_range ClientLegs>
    requires std::convertible_to<std::ranges::range_reference_t<ServerLegs>, const LegId&> &&
             std::convertible_to<std::ranges::range_reference_t<ClientLegs>, const LegId&>
LossEstimate anchor_loss(const ServerLegs& server_legs, const ClientLegs& client_legs)
{
    const std::set<LegId> server(std::ranges::begin(server_legs), std::ranges::end(server_legs));
    require(!server.empty(), ErrorCode::no_expected_events, "no server legs to anchor against");
    const std::set<LegId> client(std::ranges::begin(client_legs), std::ranges::end(client_legs));

    LossEstimate est = LossEstimate::zero(LossMethod::anchor);
    est.expected_events = server.size();
    std::uint64_t orphan_client = 0;
    for (const auto& leg : server) {
        if (!client.contains(leg)) {
            ++est.events_lost;
        }
    }
    for (const auto& leg : client) {
        if (!server.contains(leg)) {
            ++orphan_client;
        }
    }
    est.units_included = server.size();
    est.units_total = server.size() + orphan_client;
    return est;
}

// ---------------------------------------------------------------------------
// Sequence method

/// Distinct sequence numbers reported by one endpoint for one event type.
struct Sequence {
    std::string endpoint_id;
    std::string event_type;
    std::vector<std::uint64_t> numbers;  // strictly increasing
    std::string variant;                 // of the first event, "" when unassigned

    static Sequence make(std::string endpoint_id, std::string event_type,
                         std::vector<std::uint64_t> numbers, std::string variant = {})
    {
        std::ranges::sort(numbers);
        numbers.erase(std::unique(numbers.begin(), numbers.end()), numbers.end());
        return Sequence{std::move(endpoint_id), std::move(event_type), std::move(numbers),
                        std::move(variant)};
    }

    bool operator==(const Sequence&) const = default;
};

struct SequenceLoss {
    std::uint64_t sequence_gap = 0;
    std::uint64_t expected_sequence_size = 0;

    bool operator==(const SequenceLoss&) const = default;
};

inline constexpr std::uint64_t kDefaultMinSequenceSize = 5;

/// Gap count and span of one sequence; (0, 0) when the span is shorter than
/// `min_sequence_size`, which drops it from aggregation.
inline SequenceLoss sequence_loss(const Sequence& sequence, std::uint64_t min_sequence_size)
{
    if (sequence.numbers.empty()) {
        return {};
    }
    const std::uint64_t span = sequence.numbers.back() - sequence.numbers.front() + 1;
    if (span < min_sequence_size) {
        return {};
    }
    return {span - sequence.numbers.size(), span};
}

inline LossEstimate sequence_loss_rate(std::span<const Sequence> sequences,
                                       std::uint64_t min_sequence_size = kDefaultMinSequenceSize)
{
    LossEstimate est = LossEstimate::zero(LossMethod::sequence);
    est.units_total = sequences.size();
    for (const auto& seq : sequences) {
        const auto loss = sequence_loss(seq, min_sequence_size);
        if (loss.expected_sequence_size == 0) {
            continue;
        }
        est.events_lost += loss.sequence_gap;
        est.expected_events += loss.expected_sequence_size;
        ++est.units_included;
    }
    require(est.expected_events > 0, ErrorCode::no_expected_events,
            "no sequences meet minimum size " + std::to_string(min_sequence_size));
    return est;
}

/// Decides when a backwards step in a counter is an app reinstall rather
/// than a late arrival: sn <= prev_sn - prev_sn / backstep_divisor.
struct ResetPolicy {
    std::uint64_t backstep_divisor = 2;

    bool is_reset(std::uint64_t prev_sn, std::uint64_t sn) const noexcept
    {
        return sn < prev_sn && sn <= prev_sn - prev_sn / backstep_divisor;
    }
};

struct SequenceKey {
    std::string endpoint_id;
    std::string event_type;

    auto operator<=>(const SequenceKey&) const = default;
    bool operator==(const SequenceKey&) const = default;
};

/// Incremental lookup-table entry. The open sub-sequence is tracked by
/// prev_sn/sequence_gap/expected_sequence_size; sub-sequences ended by a
/// counter reset are kept so the minimum size can be applied to each.
struct SequenceEntry {
    struct Closed {
        std::uint64_t last_sn = 0;
        SequenceLoss loss;
        bool operator==(const Closed&) const = default;
    };

    std::uint64_t prev_sn = 0;
    std::uint64_t sequence_gap = 0;
    std::uint64_t expected_sequence_size = 0;
    std::vector<Closed> closed;

    bool operator==(const SequenceEntry&) const = default;
};

class SequenceState {
public:
    using Table = std::map<SequenceKey, SequenceEntry>;

    SequenceState() = default;
    explicit SequenceState(ResetPolicy policy) : policy_(policy) {}

    void update(std::string_view endpoint_id, std::string_view event_type, std::uint64_t sn)
    {
        require(sn >= 1, ErrorCode::invalid_argument, "sequence numbers start at 1");
        auto [it, fresh] =
            table_.try_emplace(SequenceKey{std::string(endpoint_id), std::string(event_type)});
        auto& e = it->second;
        if (fresh) {
            open(e, sn);
            return;
        }
        if (sn > e.prev_sn) {
            e.sequence_gap += sn - e.prev_sn - 1;
            e.expected_sequence_size += sn - e.prev_sn;
            e.prev_sn = sn;
        } else if (policy_.is_reset(e.prev_sn, sn)) {
            e.closed.push_back({e.prev_sn, {e.sequence_gap, e.expected_sequence_size}});
            open(e, sn);
        }
        // Otherwise a duplicate or late arrival: no progress to record.
    }

    const Table& entries() const noexcept { return table_; }
    const ResetPolicy& policy() const noexcept { return policy_; }

    const SequenceEntry* find(std::string_view endpoint_id, std::string_view event_type) const
    {
        const auto it = table_.find(SequenceKey{std::string(endpoint_id), std::string(event_type)});
        return it == table_.end() ? nullptr : &it->second;
    }

    /// Sums every sub-sequence whose span reaches `min_sequence_size`.
    /// `event_type` restricts the sum when non-empty.
    LossEstimate totals(std::uint64_t min_sequence_size = kDefaultMinSequenceSize,
                        std::string_view event_type = {}) const
    {
        LossEstimate est = LossEstimate::zero(LossMethod::sequence);
        auto add = [&](const SequenceLoss& l) {
            ++est.units_total;
            if (l.expected_sequence_size == 0 || l.expected_sequence_size < min_sequence_size) {
                return;
            }
            est.events_lost += l.sequence_gap;
            est.expected_events += l.expected_sequence_size;
            ++est.units_included;
        };
        for (const auto& [key, e] : table_) {
            if (!event_type.empty() && key.event_type != event_type) {
                continue;
            }
            for (const auto& c : e.closed) {
                add(c.loss);
            }
            add({e.sequence_gap, e.expected_sequence_size});
        }
        return est;
    }

    void write_checkpoint(std::ostream& out) const
    {
        out << "endpoint_id,event_type,prev_sn,sequence_gap,expected_sequence_size\n";
        auto row = [&](const SequenceKey& k, std::uint64_t sn, const SequenceLoss& l) {
            out << text::join_csv({k.endpoint_id, k.event_type, std::to_string(sn),
                                   std::to_string(l.sequence_gap),
                                   std::to_string(l.expected_sequence_size)})
                << '\n';
        };
        for (const auto& [key, e] : table_) {
            for (const auto& c : e.closed) {
                row(key, c.last_sn, c.loss);
            }
            row(key, e.prev_sn, {e.sequence_gap, e.expected_sequence_size});
        }
    }

    /// Loads a checkpoint written by write_checkpoint. Several rows for one
    /// key are sub-sequences in order; the last one is still open.
    static SequenceState read_checkpoint(std::istream& in, ResetPolicy policy = {})
    {
        require(static_cast<bool>(in), ErrorCode::unreadable_stream, "cannot read checkpoint");
        SequenceState state(policy);
        std::string line;
        bool header = false;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (text::trim(line).empty() || line.starts_with('#')) {
                continue;
            }
            const auto cells = text::split_csv(line);
            const auto where = "checkpoint line " + std::to_string(line_no);
            require(cells && cells->size() == 5, ErrorCode::parse_error, where + ": expected 5 fields");
            if (!header) {
                require((*cells)[0] == "endpoint_id" && (*cells)[4] == "expected_sequence_size",
                        ErrorCode::parse_error, where + ": unexpected header");
                header = true;
                continue;
            }
            const auto prev = text::parse_int<std::uint64_t>((*cells)[2]);
            const auto gap = text::parse_int<std::uint64_t>((*cells)[3]);
            const auto size = text::parse_int<std::uint64_t>((*cells)[4]);
            require(prev && gap && size && *prev >= 1 && *size >= 1 && *gap < *size,
                    ErrorCode::parse_error, where + ": invalid counters");
            auto [it, fresh] = state.table_.try_emplace(SequenceKey{(*cells)[0], (*cells)[1]});
            auto& e = it->second;
            if (!fresh) {
                e.closed.push_back({e.prev_sn, {e.sequence_gap, e.expected_sequence_size}});
            }
            e.prev_sn = *prev;
            e.sequence_gap = *gap;
            e.expected_sequence_size = *size;
        }
        require(!in.bad(), ErrorCode::unreadable_stream, "I/O error while reading checkpoint");
        return state;
    }

    bool operator==(const SequenceState& other) const { return table_ == other.table_; }

private:
    static void open(SequenceEntry& e, std::uint64_t sn)
    {
        e.prev_sn = sn;
        e.sequence_gap = 0;
        e.expected_sequence_size = 1;
    }

    ResetPolicy policy_;
    Table table_;
};

inline SequenceState update_sequence_state(SequenceState state, std::string_view endpoint_id,
                                           std::string_view event_type, std::uint64_t sn)
{
    state.update(endpoint_id, event_type, sn);
    return state;
}

/// Groups client events carrying sequence numbers into per-(endpoint,
/// event_type) sequences, in arrival order. A counter reset (per `policy`)
/// starts a new sequence; other backwards steps join the current one.
inline std::vector<Sequence> build_sequences(std::span<const Event> events, ResetPolicy policy = {})
{
    struct Building {
        std::vector<std::vector<std::uint64_t>> parts;
        std::uint64_t max_sn = 0;
        std::string variant;
    };
    std::map<SequenceKey, Building> building;
    for (const auto& e : events) {
        if (e.source != Source::client || !e.seq || e.endpoint_id.empty()) {
            continue;
        }
        const std::uint64_t sn = *e.seq;
        auto [it, fresh] = building.try_emplace(SequenceKey{e.endpoint_id, e.event_type});
        auto& b = it->second;
        if (fresh) {
            b.variant = e.variant.value_or("");
        }
        if (fresh || policy.is_reset(b.max_sn, sn)) {
            b.parts.emplace_back();
            b.max_sn = 0;
        }
        b.parts.back().push_back(sn);
        b.max_sn = std::max(b.max_sn, sn);
    }
    std::vector<Sequence> out;
    for (auto& [key, b] : building) {
        for (auto& part : b.parts) {
            out.push_back(Sequence::make(key.endpoint_id, key.event_type, std::move(part), b.variant));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr std::string_view kAllVariants = "*";

/// One line of a loss report: an estimate for one event type and variant
/// ("*" aggregates every variant).
struct LossReportRow {
    LossMethod method = LossMethod::anchor;
    std::string event_type;
    std::string variant;
    std::uint64_t events_lost = 0;
    std::uint64_t expected_events = 0;
    std::optional<double> rate;
    double coverage = 0.0;

    static LossReportRow from(std::string event_type, std::string variant, const LossEstimate& e)
    {
        return {e.method, std::move(event_type), std::move(variant), e.events_lost,
                e.expected_events, e.rate(), e.coverage()};
    }

    LossEstimate estimate() const
    {
        return LossEstimate{.method = method, .events_lost = events_lost, .expected_events = expected_events};
    }

    bool operator==(const LossReportRow&) const = default;
};

struct AnchorOptions {
    std::vector<std::string> event_types;  // empty: every client event type
};

/// Anchor estimates per client event type and variant. A leg's variant is
/// taken from its server events.
inline std::vector<LossReportRow> anchor_report(const EventLog& client, const EventLog& server,
                                                const AnchorOptions& options = {})
{
    std::map<LegId, std::string> server_legs;
    for (const auto& e : server.events) {
        if (e.source == Source::server && e.leg().joinable()) {
            auto [it, fresh] = server_legs.try_emplace(e.leg(), e.variant.value_or(""));
            if (it->second.empty() && e.variant) {
                it->second = *e.variant;
            }
        }
    }
    require(!server_legs.empty(), ErrorCode::no_expected_events, "no server legs to anchor against");

    std::map<std::string, std::set<LegId>> client_legs;
    std::map<LegId, std::string> client_variant;
    for (const auto& e : client.events) {
        if (e.source == Source::client && e.leg().joinable()) {
            client_legs[e.event_type].insert(e.leg());
            if (e.variant) {
                client_variant.try_emplace(e.leg(), *e.variant);
            }
        }
    }
    std::vector<std::string> types = options.event_types;
    if (types.empty()) {
        for (const auto& [type, legs] : client_legs) {
            types.push_back(type);
        }
    }

    std::set<std::string> variants;
    for (const auto& [leg, v] : server_legs) {
        variants.insert(v);
    }

    std::vector<LossReportRow> rows;
    static const std::set<LegId> kNone;
    for (const auto& type : types) {
        const auto found = client_legs.find(type);
        const auto& legs = found == client_legs.end() ? kNone : found->second;
        std::vector<LegId> all;
        all.reserve(server_legs.size());
        for (const auto& [leg, v] : server_legs) {
            all.push_back(leg);
        }
        rows.push_back(LossReportRow::from(type, std::string(kAllVariants), anchor_loss(all, legs)));
        for (const auto& variant : variants) {
            if (variant.empty()) {
                continue;
            }
            std::vector<LegId> in_variant;
            for (const auto& [leg, v] : server_legs) {
                if (v == variant) {
                    in_variant.push_back(leg);
                }
            }
            // Client legs belong to the arm the server assigned, else the one they report.
            std::vector<LegId> client_in_variant;
            for (const auto& leg : legs) {
                const auto s = server_legs.find(leg);
                const auto c = client_variant.find(leg);
                const bool mine = s != server_legs.end() ? s->second == variant
                                                         : c != client_variant.end() && c->second == variant;
                if (mine) {
                    client_in_variant.push_back(leg);
                }
            }
            rows.push_back(LossReportRow::from(type, variant, anchor_loss(in_variant, client_in_variant)));
        }
    }
    return rows;
}

/// Sequence estimates per event type and variant. Event types whose every
/// sequence falls below the minimum size raise NoExpectedEvents.
inline std::vector<LossReportRow> sequence_report(std::span<const Sequence> sequences,
                                                  std::uint64_t min_sequence_size = kDefaultMinSequenceSize)
{
    std::map<std::string, std::map<std::string, std::vector<Sequence>>> grouped;
    for (const auto& s : sequences) {
        grouped[s.event_type][s.variant].push_back(s);
    }
    require(!grouped.empty(), ErrorCode::no_expected_events, "no sequences meet minimum size");
    std::vector<LossReportRow> rows;
    for (const auto& [type, by_variant] : grouped) {
        std::vector<Sequence> all;
        for (const auto& [variant, seqs] : by_variant) {
            all.insert(all.end(), seqs.begin(), seqs.end());
        }
        rows.push_back(LossReportRow::from(type, std::string(kAllVariants),
                                           sequence_loss_rate(all, min_sequence_size)));
        for (const auto& [variant, seqs] : by_variant) {
            if (variant.empty()) {
                continue;
            }
            LossEstimate est = LossEstimate::zero(LossMethod::sequence);
            for (const auto& s : seqs) {
                const auto l = sequence_loss(s, min_sequence_size);
                ++est.units_total;
                if (l.expected_sequence_size > 0) {
                    est.events_lost += l.sequence_gap;
                    est.expected_events += l.expected_sequence_size;
                    ++est.units_included;
                }
            }
            rows.push_back(LossReportRow::from(type, variant, est));
        }
    }
    return rows;
}

inline constexpr std::string_view kLossReportHeader =
    "method,event_type,variant,events_lost,expected_events,rate,coverage";

inline void write_loss_report(std::ostream& out, std::span<const LossReportRow> rows)
{
    out << kLossReportHeader << '\n';
    for (const auto& r : rows) {
        out << text::join_csv({std::string(to_string(r.method)), r.event_type, r.variant,
                               std::to_string(r.events_lost), std::to_string(r.expected_events),
                               r.rate ? text::format_double(*r.rate) : "",
                               text::format_double(r.coverage)})
            << '\n';
    }
}

inline std::vector<LossReportRow> read_loss_report(std::istream& in)
{
    require(static_cast<bool>(in), ErrorCode::unreadable_stream, "cannot read loss report");
    std::vector<LossReportRow> rows;
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty() || line.starts_with('#')) {
            continue;
        }
        if (!header) {
            require(text::trim(line) == kLossReportHeader, ErrorCode::parse_error,
                    "loss report has unexpected header");
            header = true;
            continue;
        }
        const auto where = "loss report line " + std::to_string(line_no);
        const auto cells = text::split_csv(line);
        require(cells && cells->size() == 7, ErrorCode::parse_error, where + ": expected 7 fields");
        const auto& c = *cells;
        LossReportRow r;
        const auto method = parse_loss_method(c[0]);
        const auto lost = text::parse_int<std::uint64_t>(c[3]);
        const auto expected = text::parse_int<std::uint64_t>(c[4]);
        const auto coverage = text::parse_double(c[6]);
        require(method && lost && expected && coverage && *lost <= *expected, ErrorCode::parse_error,
                where + ": invalid values");
        r.method = *method;
        r.event_type = c[1];
        r.variant = c[2];
        r.events_lost = *lost;
        r.expected_events = *expected;
        if (!c[5].empty()) {
            r.rate = text::parse_double(c[5]);
            require(r.rate.has_value(), ErrorCode::parse_error, where + ": invalid rate");
        }
        r.coverage = *coverage;
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace telemloss
