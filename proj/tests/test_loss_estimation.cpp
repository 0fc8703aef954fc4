#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "telemloss/loss_estimation.hpp"

using namespace telemloss;

namespace {

std::vector<LegId> legs(std::initializer_list<std::pair<const char*, const char*>> l)
{
    std::vector<LegId> out;
    for (const auto& [s, e] : l) out.push_back({s, e});
    return out;
}

Sequence seq(std::vector<std::uint64_t> numbers) { return Sequence::make("e", "CST", std::move(numbers)); }

std::vector<std::uint64_t> range(std::uint64_t lo, std::uint64_t hi)
{
    std::vector<std::uint64_t> v;
    for (auto i = lo; i <= hi; ++i) v.push_back(i);
    return v;
}

Event client(std::string endpoint, std::string type, std::uint64_t sn, std::string variant = "control",
             std::string session = "s")
{
    Event e;
    e.session_id = std::move(session);
    e.endpoint_id = std::move(endpoint);
    e.event_type = std::move(type);
    e.seq = sn;
    e.variant = std::move(variant);
    return e;
}

Event client_event_for(const Event& server)
{
    Event e = server;
    e.source = Source::client;
    e.event_type = "CST";
    e.seq = 1;
    return e;
}

// Random per-key in-order stream: counters that lose events, occasionally
// repeat a number and occasionally restart at 1 (reinstall).
std::vector<Event> random_stream(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Event> events;
    const int endpoints = 1 + static_cast<int>(rng() % 20);
    const double loss = u(rng) * 0.3;
    for (int ep = 0; ep < endpoints; ++ep) {
        for (const char* type : {"CST", "Rating"}) {
            std::uint64_t counter = 0;
            const int generated = static_cast<int>(rng() % 120);
            for (int i = 0; i < generated; ++i) {
                if (counter > 10 && u(rng) < 0.02) counter = 0;  // reset
                ++counter;
                if (u(rng) < loss) continue;
                events.push_back(client("e" + std::to_string(ep), type, counter));
                if (u(rng) < 0.02) events.push_back(events.back());  // retransmission
            }
        }
    }
    // Interleave keys while keeping each key's order.
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        return std::hash<std::string>{}(a.endpoint_id) % 7 < std::hash<std::string>{}(b.endpoint_id) % 7;
    });
    return events;
}

}  // namespace

TEST(AnchorLoss, SetDifferenceExample)
{
    const auto server = legs({{"c1", "e1"}, {"c2", "e1"}, {"c3", "e2"}});
    const auto client = legs({{"c1", "e1"}, {"c3", "e2"}});
    const auto est = anchor_loss(server, client);
    EXPECT_EQ(est.events_lost, 1u);
    EXPECT_EQ(est.expected_events, 3u);
    EXPECT_DOUBLE_EQ(*est.rate(), 1.0 / 3.0);
    EXPECT_EQ(est.method, LossMethod::anchor);
}

TEST(AnchorLoss, NoMissingLegs)
{
    const auto both = legs({{"a", "1"}, {"b", "2"}});
    EXPECT_EQ(*anchor_loss(both, both).rate(), 0.0);
}

TEST(AnchorLoss, ExtraClientLegsIgnored)
{
    const auto est = anchor_loss(legs({{"a", "1"}}), legs({{"a", "1"}, {"b", "1"}}));
    EXPECT_EQ(est.events_lost, 0u);
    EXPECT_EQ(est.expected_events, 1u);
    EXPECT_EQ(*est.rate(), 0.0);
    EXPECT_DOUBLE_EQ(est.coverage(), 0.5);
}

TEST(AnchorLoss, EmptyServerIsGuarded)
{
    try {
        anchor_loss(std::vector<LegId>{}, legs({{"a", "1"}}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::no_expected_events);
        EXPECT_TRUE(e.is_statistical_guard());
    }
}

TEST(AnchorLoss, RandomSetsMatchBruteForce)
{
    std::mt19937_64 rng(41);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<LegId> server, client;
        for (int i = 0; i < 60; ++i) {
            LegId l{"s" + std::to_string(rng() % 40), "e" + std::to_string(rng() % 3)};
            (rng() % 2 ? server : client).push_back(l);
        }
        if (server.empty()) continue;
        std::uint64_t lost = 0;
        const std::set<LegId> s(server.begin(), server.end());
        for (const auto& l : s) lost += std::find(client.begin(), client.end(), l) == client.end();
        const auto est = anchor_loss(server, client);
        EXPECT_EQ(est.events_lost, lost);
        EXPECT_EQ(est.expected_events, s.size());
        EXPECT_LE(est.events_lost, est.expected_events);
    }
}

TEST(SequenceLoss, Examples)
{
    EXPECT_EQ(sequence_loss(seq({1, 2, 4, 5, 7}), 5), (SequenceLoss{2, 7}));
    EXPECT_EQ(sequence_loss(seq({3, 4, 5}), 5), (SequenceLoss{0, 0}));
    EXPECT_EQ(sequence_loss(seq(range(10, 19)), 5), (SequenceLoss{0, 10}));
    EXPECT_EQ(sequence_loss(seq({}), 1), (SequenceLoss{0, 0}));
}

TEST(SequenceLoss, GuardAppliesToSpanNotCount)
{
    // Two received numbers spanning 9 pass a minimum of 5.
    EXPECT_EQ(sequence_loss(seq({1, 9}), 5), (SequenceLoss{7, 9}));
    EXPECT_EQ(sequence_loss(seq({1, 4}), 5), (SequenceLoss{0, 0}));
}

TEST(SequenceMake, SortsAndDeduplicates)
{
    const auto s = seq({5, 1, 3, 3, 2});
    EXPECT_EQ(s.numbers, (std::vector<std::uint64_t>{1, 2, 3, 5}));
}

TEST(SequenceLossRate, Examples)
{
    auto first = range(1, 10);
    first.erase(first.begin() + 2);  // missing 3
    const std::vector<Sequence> s{seq(first), seq({1, 2, 3})};
    const auto est = sequence_loss_rate(s, 5);
    EXPECT_EQ(est.events_lost, 1u);
    EXPECT_EQ(est.expected_events, 10u);
    EXPECT_DOUBLE_EQ(*est.rate(), 0.1);
    EXPECT_DOUBLE_EQ(est.coverage(), 0.5);

    const std::vector<Sequence> full{seq(range(1, 100))};
    const auto complete = sequence_loss_rate(full);
    EXPECT_EQ(*complete.rate(), 0.0);
    EXPECT_EQ(complete.coverage(), 1.0);
}

TEST(SequenceLossRate, AllShortIsGuarded)
{
    const std::vector<Sequence> s{seq({1, 2}), seq({4})};
    try {
        sequence_loss_rate(s, 5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::no_expected_events);
        EXPECT_NE(std::string(e.what()).find("no sequences meet minimum size"), std::string::npos);
    }
}

TEST(SequenceLossRate, DefaultMinimumIsFive)
{
    EXPECT_EQ(kDefaultMinSequenceSize, 5u);
    const std::vector<Sequence> four{seq({1, 4})};
    EXPECT_THROW(sequence_loss_rate(four), Error);
    const std::vector<Sequence> five{seq({1, 5})};
    EXPECT_EQ(sequence_loss_rate(five).expected_events, 5u);
}

TEST(SequenceState, FreshKey)
{
    SequenceState st;
    st.update("e", "CST", 1);
    const auto* e = st.find("e", "CST");
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->prev_sn, 1u);
    EXPECT_EQ(e->sequence_gap, 0u);
    EXPECT_EQ(e->expected_sequence_size, 1u);
}

TEST(SequenceState, ForwardJumpMatchesBatch)
{
    SequenceState st;
    for (std::uint64_t sn : {1, 2, 3, 4, 5}) st = update_sequence_state(std::move(st), "e", "CST", sn);
    st = update_sequence_state(std::move(st), "e", "CST", 8);
    const auto* e = st.find("e", "CST");
    EXPECT_EQ(e->prev_sn, 8u);
    EXPECT_EQ(e->sequence_gap, 2u);
    EXPECT_EQ(e->expected_sequence_size, 8u);
    EXPECT_EQ(sequence_loss(seq({1, 2, 3, 4, 5, 8}), 1), (SequenceLoss{2, 8}));
}

TEST(SequenceState, ResetOpensSubSequenceWithoutGap)
{
    SequenceState st;
    for (std::uint64_t sn = 1; sn <= 50; ++sn) {
        if (sn != 20) st.update("e", "CST", sn);
    }
    st.update("e", "CST", 1);
    const auto* e = st.find("e", "CST");
    EXPECT_EQ(e->prev_sn, 1u);
    EXPECT_EQ(e->sequence_gap, 0u);
    EXPECT_EQ(e->expected_sequence_size, 1u);
    ASSERT_EQ(e->closed.size(), 1u);
    EXPECT_EQ(e->closed[0].loss, (SequenceLoss{1, 50}));
    const auto totals = st.totals(1);
    EXPECT_EQ(totals.events_lost, 1u);
    EXPECT_EQ(totals.expected_events, 51u);
}

TEST(SequenceState, DuplicatesAndSmallBacksteps)
{
    SequenceState st;
    for (std::uint64_t sn : {1, 2, 3, 10, 10, 9, 6}) st.update("e", "CST", sn);
    const auto* e = st.find("e", "CST");
    EXPECT_EQ(e->prev_sn, 10u);
    EXPECT_EQ(e->sequence_gap, 6u);
    EXPECT_EQ(e->expected_sequence_size, 10u);
    EXPECT_TRUE(e->closed.empty());
    EXPECT_THROW(st.update("e", "CST", 0), Error);
}

TEST(SequenceState, InvariantsHoldOnRandomStreams)
{
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        SequenceState st;
        std::map<SequenceKey, std::uint64_t> last_total;
        for (const auto& ev : random_stream(rng)) {
            st.update(ev.endpoint_id, ev.event_type, *ev.seq);
            const SequenceKey key{ev.endpoint_id, ev.event_type};
            const auto& entry = st.entries().at(key);
            EXPECT_LE(entry.sequence_gap, entry.expected_sequence_size);
            std::uint64_t total = entry.expected_sequence_size;
            for (const auto& c : entry.closed) total += c.loss.expected_sequence_size;
            EXPECT_GE(total, last_total[key]);
            last_total[key] = total;
        }
    }
}

TEST(SequenceState, BatchIncrementalEquivalence)
{
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 100; ++rep) {
        const auto events = random_stream(rng);
        SequenceState st;
        for (const auto& ev : events) st = update_sequence_state(std::move(st), ev.endpoint_id, ev.event_type, *ev.seq);
        const auto sequences = build_sequences(events);
        for (std::uint64_t min : {1, 5, 20}) {
            const auto inc = st.totals(min);
            LossEstimate batch = LossEstimate::zero(LossMethod::sequence);
            try {
                batch = sequence_loss_rate(sequences, min);
            } catch (const Error& e) {
                // Every sequence is too short: batch refuses, incremental reports nothing usable.
                EXPECT_EQ(e.code(), ErrorCode::no_expected_events);
                batch.units_total = sequences.size();
            }
            EXPECT_EQ(inc.events_lost, batch.events_lost) << rep << " min " << min;
            EXPECT_EQ(inc.expected_events, batch.expected_events) << rep << " min " << min;
            EXPECT_EQ(inc.units_included, batch.units_included);
            EXPECT_EQ(inc.units_total, batch.units_total);
        }
    }
}

TEST(SequenceState, CheckpointRoundTripResumes)
{
    std::mt19937_64 rng(19);
    for (int rep = 0; rep < 30; ++rep) {
        const auto events = random_stream(rng);
        const auto half = events.size() / 2;
        SequenceState whole;
        SequenceState first;
        for (std::size_t i = 0; i < events.size(); ++i) {
            whole.update(events[i].endpoint_id, events[i].event_type, *events[i].seq);
            if (i < half) first.update(events[i].endpoint_id, events[i].event_type, *events[i].seq);
        }
        std::stringstream buf;
        first.write_checkpoint(buf);
        auto resumed = SequenceState::read_checkpoint(buf);
        EXPECT_EQ(resumed, first);
        for (std::size_t i = half; i < events.size(); ++i) {
            resumed.update(events[i].endpoint_id, events[i].event_type, *events[i].seq);
        }
        EXPECT_EQ(resumed, whole);
    }
}

TEST(SequenceState, CheckpointHeaderAndValidation)
{
    SequenceState st;
    st.update("e,1", "CST", 4);
    std::ostringstream out;
    st.write_checkpoint(out);
    EXPECT_EQ(out.str(), "endpoint_id,event_type,prev_sn,sequence_gap,expected_sequence_size\n\"e,1\",CST,4,0,1\n");
    std::istringstream bad("endpoint_id,event_type,prev_sn,sequence_gap,expected_sequence_size\ne,CST,4,3,2\n");
    EXPECT_THROW(SequenceState::read_checkpoint(bad), Error);
}

TEST(ResetPolicy, DefaultHalfCounterRule)
{
    const ResetPolicy p;
    EXPECT_TRUE(p.is_reset(50, 1));
    EXPECT_TRUE(p.is_reset(50, 25));
    EXPECT_FALSE(p.is_reset(50, 26));
    EXPECT_FALSE(p.is_reset(50, 50));
    EXPECT_FALSE(p.is_reset(1, 1));
    const ResetPolicy strict{10};
    EXPECT_FALSE(strict.is_reset(50, 46));
    EXPECT_TRUE(strict.is_reset(50, 45));
}

TEST(BuildSequences, SplitsOnResetAndKeepsVariant)
{
    std::vector<Event> events;
    for (std::uint64_t sn : {1, 2, 3, 5, 6, 7, 8, 9, 10, 1, 2, 3}) events.push_back(client("e", "CST", sn, "treatment"));
    events.push_back(client("f", "CST", 4));
    Event no_seq = client("f", "CST", 1);
    no_seq.seq.reset();
    events.push_back(no_seq);
    const auto s = build_sequences(events);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(s[0].numbers, (std::vector<std::uint64_t>{1, 2, 3, 5, 6, 7, 8, 9, 10}));
    EXPECT_EQ(s[0].variant, "treatment");
    EXPECT_EQ(s[1].numbers, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(s[2].endpoint_id, "f");
}

TEST(MergeLossEstimates, Examples)
{
    const LossEstimate a{.method = LossMethod::anchor, .events_lost = 1, .expected_events = 4};
    const LossEstimate b{.method = LossMethod::anchor, .events_lost = 1, .expected_events = 6};
    const auto m = merge_loss_estimates(a, b);
    EXPECT_EQ(m.events_lost, 2u);
    EXPECT_EQ(m.expected_events, 10u);
    EXPECT_DOUBLE_EQ(*m.rate(), 0.2);
    EXPECT_EQ(merge_loss_estimates(a, LossEstimate::zero(LossMethod::anchor)), a);
    EXPECT_FALSE(LossEstimate::zero(LossMethod::anchor).rate());
    const LossEstimate s{.method = LossMethod::sequence, .events_lost = 1, .expected_events = 4};
    try {
        merge_loss_estimates(a, s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::method_mismatch);
    }
}

TEST(MergeLossEstimates, CommutativeAndAssociative)
{
    std::mt19937_64 rng(3);
    auto random_est = [&] {
        const auto expected = rng() % 1000;
        return LossEstimate{LossMethod::sequence, expected ? rng() % (expected + 1) : 0, expected, rng() % 50,
                            50 + rng() % 50};
    };
    for (int i = 0; i < 500; ++i) {
        const auto a = random_est(), b = random_est(), c = random_est();
        EXPECT_EQ(merge_loss_estimates(a, b), merge_loss_estimates(b, a));
        EXPECT_EQ(merge_loss_estimates(merge_loss_estimates(a, b), c),
                  merge_loss_estimates(a, merge_loss_estimates(b, c)));
    }
}

TEST(AnchorReport, PerVariantRowsPartitionTheTotal)
{
    EventLog client, server;
    for (int i = 0; i < 10; ++i) {
        const std::string variant = i % 2 ? "treatment" : "control";
        Event s;
        s.session_id = "s" + std::to_string(i);
        s.endpoint_id = "e";
        s.source = Source::server;
        s.event_type = "ServerCallRecord";
        s.variant = variant;
        server.events.push_back(s);
        if (i % 5 != 0) client.events.push_back(client_event_for(s));
    }
    const auto rows = anchor_report(client, server);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].variant, "*");
    EXPECT_EQ(rows[0].events_lost, 2u);
    EXPECT_EQ(rows[0].expected_events, 10u);
    EXPECT_EQ(rows[1].variant, "control");
    EXPECT_EQ(rows[1].events_lost + rows[2].events_lost, rows[0].events_lost);
    EXPECT_EQ(rows[1].expected_events + rows[2].expected_events, rows[0].expected_events);
    EXPECT_EQ(rows[1].coverage, 1.0);
}

TEST(LossReport, RoundTrip)
{
    const std::vector<LossReportRow> rows{
        LossReportRow::from("CST", "*", {LossMethod::anchor, 3, 100, 100, 100}),
        LossReportRow::from("CST", "control", {LossMethod::anchor, 0, 0, 0, 0}),
        LossReportRow::from("Media,Quality", "treatment", {LossMethod::sequence, 7, 30, 2, 3}),
    };
    std::stringstream buf;
    buf << "# telemloss estimate-loss\n";
    write_loss_report(buf, rows);
    EXPECT_EQ(read_loss_report(buf), rows);
    std::istringstream bad("method,event_type\n");
    EXPECT_THROW(read_loss_report(bad), Error);
}
