#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "telemloss/error.hpp"
#include "telemloss/text.hpp"

namespace telemloss {

enum class Source { client, server };

constexpr std::string_view to_string(Source s) noexcept
{
    return s == Source::client ? "client" : "server";
}

inline std::optional<Source> parse_source(std::string_view s) noexcept
{
    if (s == "client") {
        return Source::client;
    }
    if (s == "server") {
        return Source::server;
    }
    return std::nullopt;
}

/// A measure is either numeric or free text.
using MeasureValue = std::variant<double, std::string>;
using Measures = std::map<std::string, MeasureValue, std::less<>>;

/// One endpoint's participation in a session; the join key for all events.
struct LegId {
    std::string session_id;
    std::string endpoint_id;

    bool joinable() const noexcept { return !session_id.empty() && !endpoint_id.empty(); }

    auto operator<=>(const LegId&) const = default;
    bool operator==(const LegId&) const = default;
};

struct Event {
    std::string session_id;
    std::string endpoint_id;
    Source source = Source::client;
    std::string event_type;
    std::optional<std::string> variant;
    std::optional<std::uint64_t> seq;
    std::int64_t timestamp = 0;
    Measures measures;

    LegId leg() const { return {session_id, endpoint_id}; }

    std::optional<double> numeric(std::string_view measure) const
    {
        const auto it = measures.find(measure);
        if (it == measures.end()) {
            return std::nullopt;
        }
        if (const auto* d = std::get_if<double>(&it->second)) {
            return *d;
        }
        return std::nullopt;
    }

    bool operator==(const Event&) const = default;
};

struct EventLog {
    std::vector<Event> events;
    std::string source;
    std::size_t rows = 0;  // non-blank data rows seen by the parser
    std::size_t bad_rows = 0;
    std::size_t duplicates_removed = 0;
    std::vector<std::string> row_errors;  // first few malformed-row messages
};

enum class LogFormat { jsonl, csv };

inline std::optional<LogFormat> parse_log_format(std::string_view s) noexcept
{
    if (s == "jsonl" || s == "json") {
        return LogFormat::jsonl;
    }
    if (s == "csv") {
        return LogFormat::csv;
    }
    return std::nullopt;
}

struct ParseOptions {
    /// Malformed rows are skipped while bad_rows/rows stays at or below this.
    double max_bad_row_ratio = 0.01;
    std::string source;
};

namespace detail {

inline constexpr std::size_t kMaxRowErrors = 20;
inline constexpr char kKeySep = '\x1f';

inline nlohmann::ordered_json event_to_json(const Event& e)
{
    nlohmann::ordered_json j;
    j["session_id"] = e.session_id;
    j["endpoint_id"] = e.endpoint_id;
    j["source"] = std::string(to_string(e.source));
    j["event_type"] = e.event_type;
    j["variant"] = e.variant ? nlohmann::ordered_json(*e.variant) : nlohmann::ordered_json(nullptr);
    j["seq"] = e.seq ? nlohmann::ordered_json(*e.seq) : nlohmann::ordered_json(nullptr);
    j["ts"] = e.timestamp;
    auto m = nlohmann::ordered_json::object();
    for (const auto& [k, v] : e.measures) {
        if (const auto* d = std::get_if<double>(&v)) {
            m[k] = *d;
        } else {
            m[k] = std::get<std::string>(v);
        }
    }
    j["measures"] = std::move(m);
    return j;
}

// Returns an error message, or nullopt when the row was accepted into `out`.
inline std::optional<std::string> event_from_json(const nlohmann::json& j, Event& out)
{
    if (!j.is_object()) {
        return "row is not a JSON object";
    }
    auto str_field = [&](const char* key, std::string& dst) -> std::optional<std::string> {
        const auto it = j.find(key);
        if (it == j.end() || !it->is_string()) {
            return std::string("missing or non-string field '") + key + "'";
        }
        dst = it->get<std::string>();
        return std::nullopt;
    };
    if (auto err = str_field("session_id", out.session_id)) return err;
    if (auto err = str_field("endpoint_id", out.endpoint_id)) return err;
    if (auto err = str_field("event_type", out.event_type)) return err;
    if (out.event_type.empty()) {
        return "empty event_type";
    }
    std::string source;
    if (auto err = str_field("source", source)) return err;
    const auto src = parse_source(source);
    if (!src) {
        return "source must be 'client' or 'server'";
    }
    out.source = *src;

    out.variant.reset();
    if (const auto it = j.find("variant"); it != j.end() && !it->is_null()) {
        if (!it->is_string() || it->get<std::string>().empty()) {
            return "variant must be a non-empty string or null";
        }
        out.variant = it->get<std::string>();
    }
    out.seq.reset();
    if (const auto it = j.find("seq"); it != j.end() && !it->is_null()) {
        if (!it->is_number_unsigned() || it->get<std::uint64_t>() < 1) {
            return "seq must be an integer >= 1 or null";
        }
        out.seq = it->get<std::uint64_t>();
    }
    const auto ts = j.find("ts");
    if (ts == j.end() || !ts->is_number_integer()) {
        return "missing or non-integer field 'ts'";
    }
    out.timestamp = ts->get<std::int64_t>();

    out.measures.clear();
    if (const auto it = j.find("measures"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) {
            return "measures must be an object";
        }
        for (const auto& [k, v] : it->items()) {
            if (v.is_number()) {
                out.measures.emplace(k, v.get<double>());
            } else if (v.is_string()) {
                out.measures.emplace(k, v.get<std::string>());
            } else {
                return "measure '" + k + "' must be a number or string";
            }
        }
    }
    return std::nullopt;
}

inline constexpr std::string_view kCsvFixedColumns[] = {
    "session_id", "endpoint_id", "source", "event_type", "variant", "seq", "ts"};
inline constexpr std::string_view kMeasurePrefix = "m_";

struct CsvLayout {
    std::size_t columns = 0;
    std::size_t fixed[std::size(kCsvFixedColumns)] = {};
    std::vector<std::pair<std::size_t, std::string>> measures;  // column -> measure name
};

inline CsvLayout csv_layout(const std::vector<std::string>& header)
{
    CsvLayout layout;
    layout.columns = header.size();
    for (std::size_t f = 0; f < std::size(kCsvFixedColumns); ++f) {
        bool found = false;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c] == kCsvFixedColumns[f]) {
                layout.fixed[f] = c;
                found = true;
                break;
            }
        }
        require(found, ErrorCode::parse_error,
                "CSV header lacks column '" + std::string(kCsvFixedColumns[f]) + "'");
    }
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c].starts_with(kMeasurePrefix)) {
            layout.measures.emplace_back(c, header[c].substr(kMeasurePrefix.size()));
        }
    }
    return layout;
}

inline std::optional<std::string> event_from_csv(const CsvLayout& layout,
                                                 const std::vector<std::string>& cells, Event& out)
{
    if (cells.size() != layout.columns) {
        return "expected " + std::to_string(layout.columns) + " fields, got " +
               std::to_string(cells.size());
    }
    const auto cell = [&](std::size_t f) -> const std::string& { return cells[layout.fixed[f]]; };
    out.session_id = cell(0);
    out.endpoint_id = cell(1);
    const auto src = parse_source(cell(2));
    if (!src) {
        return "source must be 'client' or 'server'";
    }
    out.source = *src;
    out.event_type = cell(3);
    if (out.event_type.empty()) {
        return "empty event_type";
    }
    out.variant.reset();
    if (!cell(4).empty()) {
        out.variant = cell(4);
    }
    out.seq.reset();
    if (!cell(5).empty()) {
        const auto seq = text::parse_int<std::uint64_t>(cell(5));
        if (!seq || *seq < 1) {
            return "seq must be an integer >= 1 or empty";
        }
        out.seq = *seq;
    }
    const auto ts = text::parse_int<std::int64_t>(cell(6));
    if (!ts) {
        return "ts must be an integer";
    }
    out.timestamp = *ts;
    out.measures.clear();
    for (const auto& [column, name] : layout.measures) {
        const auto& raw = cells[column];
        if (raw.empty()) {
            continue;
        }
        if (const auto d = text::parse_double(raw)) {
            out.measures.emplace(name, *d);
        } else {
            out.measures.emplace(name, raw);
        }
    }
    return std::nullopt;
}

inline std::string dedup_key(const Event& e)
{
    std::string key;
    key.reserve(e.session_id.size() + e.endpoint_id.size() + e.event_type.size() + 24);
    key += e.session_id;
    key += kKeySep;
    key += e.endpoint_id;
    key += kKeySep;
    key += e.event_type;
    key += kKeySep;
    if (e.seq) {
        key += std::to_string(*e.seq);
    } else {
        // No sequence number: only byte-identical rows are duplicates.
        key += '#';
        key += event_to_json(e).dump();
    }
    return key;
}

}  // namespace detail

/// Removes repeated events keeping the first occurrence. Events with a
/// sequence number are keyed by (leg, event_type, seq); others by full row.
inline std::size_t deduplicate(std::vector<Event>& events)
{
    std::unordered_set<std::string> seen;
    seen.reserve(events.size());
    std::size_t kept = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (seen.insert(detail::dedup_key(events[i])).second) {
            if (kept != i) {
                events[kept] = std::move(events[i]);
            }
            ++kept;
        }
    }
    const std::size_t removed = events.size() - kept;
    events.resize(kept);
    return removed;
}

/// Reads a JSONL or CSV event log, skipping malformed rows up to the
/// configured ratio, and de-duplicates the result.
inline EventLog parse_event_log(std::istream& in, LogFormat format, const ParseOptions& options = {})
{
    require(static_cast<bool>(in), ErrorCode::unreadable_stream,
            "cannot read event stream" + (options.source.empty() ? "" : " '" + options.source + "'"));
    EventLog log;
    log.source = options.source;

    auto reject = [&](std::size_t line_no, const std::string& why) {
        ++log.bad_rows;
        if (log.row_errors.size() < detail::kMaxRowErrors) {
            log.row_errors.push_back("line " + std::to_string(line_no) + ": " + why);
        }
    };

    std::optional<detail::CsvLayout> layout;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // '#' lines carry provenance comments in both formats.
        if (text::trim(line).empty() || line.starts_with('#')) {
            continue;
        }
        if (format == LogFormat::csv) {
            auto cells = text::split_csv(line);
            if (!layout) {
                require(cells.has_value(), ErrorCode::parse_error, "unreadable CSV header");
                layout = detail::csv_layout(*cells);
                continue;
            }
            ++log.rows;
            if (!cells) {
                reject(line_no, "unterminated quote");
                continue;
            }
            Event e;
            if (auto err = detail::event_from_csv(*layout, *cells, e)) {
                reject(line_no, *err);
                continue;
            }
            log.events.push_back(std::move(e));
        } else {
            ++log.rows;
            const auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
            if (j.is_discarded()) {
                reject(line_no, "invalid JSON");
                continue;
            }
            Event e;
            if (auto err = detail::event_from_json(j, e)) {
                reject(line_no, *err);
                continue;
            }
            log.events.push_back(std::move(e));
        }
    }
    require(!in.bad(), ErrorCode::unreadable_stream, "I/O error while reading event stream");

    if (log.rows > 0) {
        const double ratio = static_cast<double>(log.bad_rows) / static_cast<double>(log.rows);
        if (ratio > options.max_bad_row_ratio) {
            fail(ErrorCode::bad_row_ratio_exceeded,
                 std::to_string(log.bad_rows) + " of " + std::to_string(log.rows) +
                     " rows malformed (limit " + text::format_double(options.max_bad_row_ratio) +
                     ")" + (log.row_errors.empty() ? "" : "; first: " + log.row_errors.front()));
        }
    }
    log.duplicates_removed = deduplicate(log.events);
    return log;
}

inline void write_event_log(std::ostream& out, std::span<const Event> events, LogFormat format)
{
    if (format == LogFormat::jsonl) {
        for (const auto& e : events) {
            out << detail::event_to_json(e).dump() << '\n';
        }
        return;
    }
    std::map<std::string, int, std::less<>> measure_names;
    for (const auto& e : events) {
        for (const auto& [k, v] : e.measures) {
            measure_names.emplace(k, 0);
        }
    }
    std::vector<std::string> header(std::begin(detail::kCsvFixedColumns),
                                    std::end(detail::kCsvFixedColumns));
    for (const auto& [name, unused] : measure_names) {
        header.push_back(std::string(detail::kMeasurePrefix) + name);
    }
    out << text::join_csv(header) << '\n';
    std::vector<std::string> row;
    for (const auto& e : events) {
        row.clear();
        row.push_back(e.session_id);
        row.push_back(e.endpoint_id);
        row.emplace_back(to_string(e.source));
        row.push_back(e.event_type);
        row.push_back(e.variant.value_or(""));
        row.push_back(e.seq ? std::to_string(*e.seq) : "");
        row.push_back(std::to_string(e.timestamp));
        for (const auto& [name, unused] : measure_names) {
            const auto it = e.measures.find(name);
            if (it == e.measures.end()) {
                row.emplace_back();
            } else if (const auto* d = std::get_if<double>(&it->second)) {
                row.push_back(text::format_double(*d));
            } else {
                row.push_back(std::get<std::string>(it->second));
            }
        }
        out << text::join_csv(row) << '\n';
    }
}

/// Splits a mixed log into (client, server) logs, preserving order.
inline std::pair<EventLog, EventLog> split_by_source(const EventLog& log)
{
    EventLog client;
    EventLog server;
    client.source = server.source = log.source;
    for (const auto& e : log.events) {
        (e.source == Source::client ? client : server).events.push_back(e);
    }
    return {std::move(client), std::move(server)};
}

struct EventSummary {
    Source source = Source::client;
    Measures measures;

    bool operator==(const EventSummary&) const = default;
};

/// The joined view of one leg: which event types arrived and what they said.
struct SessionRecord {
    LegId leg;
    std::optional<std::string> variant;
    std::map<std::string, EventSummary, std::less<>> events;  // by event_type

    bool has(std::string_view event_type) const { return events.find(event_type) != events.end(); }

    bool has_source(Source s) const
    {
        for (const auto& [type, summary] : events) {
            if (summary.source == s) {
                return true;
            }
        }
        return false;
    }

    const EventSummary* event(std::string_view event_type) const
    {
        const auto it = events.find(event_type);
        return it == events.end() ? nullptr : &it->second;
    }

    /// Union of all joined measures; on a name clash the event type that
    /// sorts first wins.
    Measures merged_measures() const
    {
        Measures merged;
        for (const auto& [type, summary] : events) {
            for (const auto& [k, v] : summary.measures) {
                merged.emplace(k, v);
            }
        }
        return merged;
    }

    bool operator==(const SessionRecord&) const = default;
};

struct JoinResult {
    std::vector<SessionRecord> records;  // sorted by leg
    std::size_t join_dropped = 0;
};

/// Outer join of client and server events on (session_id, endpoint_id).
/// Events without a complete leg identity cannot be joined and are counted.
inline JoinResult join_sessions(const EventLog& client_events, const EventLog& server_events)
{
    std::map<LegId, SessionRecord> by_leg;
    JoinResult result;
    auto absorb = [&](const Event& e) {
        if (!e.leg().joinable()) {
            ++result.join_dropped;
            return;
        }
        auto [it, inserted] = by_leg.try_emplace(e.leg());
        auto& rec = it->second;
        if (inserted) {
            rec.leg = e.leg();
        }
        if (!rec.variant && e.variant) {
            rec.variant = e.variant;
        }
        auto [ev, fresh] = rec.events.try_emplace(e.event_type);
        if (fresh) {
            ev->second.source = e.source;
        }
        for (const auto& [k, v] : e.measures) {
            ev->second.measures.emplace(k, v);
        }
    };
    for (const auto& e : client_events.events) {
        absorb(e);
    }
    for (const auto& e : server_events.events) {
        absorb(e);
    }
    result.records.reserve(by_leg.size());
    for (auto& [leg, rec] : by_leg) {
        result.records.push_back(std::move(rec));
    }
    return result;
}

/// Projects joined records back to one event per (leg, event_type).
inline std::pair<EventLog, EventLog> project_events(std::span<const SessionRecord> records)
{
    EventLog client;
    EventLog server;
    for (const auto& rec : records) {
        for (const auto& [type, summary] : rec.events) {
            Event e;
            e.session_id = rec.leg.session_id;
            e.endpoint_id = rec.leg.endpoint_id;
            e.source = summary.source;
            e.event_type = type;
            e.variant = rec.variant;
            e.measures = summary.measures;
            (summary.source == Source::client ? client : server).events.push_back(std::move(e));
        }
    }
    return {std::move(client), std::move(server)};
}

}  // namespace telemloss
