#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace manr;
using manr::testing::make_problem;
using manr::testing::make_state;
using manr::testing::tiny_config;

namespace {

constexpr NodeId P = kPoolSentinel;

// Customers A=0 (0.3,0.4), B=1, C=2; agent 0 depot 3 at the origin, agent 1 depot 4.
RoutingProblem three() {
    return make_problem({{0.3, 0.4}, {0.7, 0.2}, {0.5, 0.9}}, {{0.0, 0.0}, {1.0, 1.0}}, {1.0, 0.95});
}

bool same_features(const NodeFeatures& a, const NodeFeatures& b) {
    for (int i = 0; i < 5; ++i) {
        if (std::abs(a[i] - b[i]) > 1e-12) return false;
    }
    return true;
}

}  // namespace

TEST(Features, FiveVector) {
    auto p = three();
    auto s = make_state(p, {{0, 1}, {2}});
    auto f = node_input_features(p, 0, s.routes[0], 1);
    EXPECT_TRUE(same_features(f, {0.3, 0.4, 0.0, 0.0, 0.5}));
    auto d = node_input_features(p, 0, s.routes[0], 0);
    EXPECT_TRUE(same_features(d, {0.0, 0.0, 0.0, 0.0, 0.0}));
    auto q = make_problem({{0.3, 0.4}}, {{0.0, 0.0}}, {0.95});
    auto g = node_input_features(q, 0, make_route(q, 0, std::vector<NodeId>{0}), 1);
    EXPECT_NEAR(g[4], 0.526315789473684, 1e-12);
    // Trailing depot: predecessor is the last customer.
    auto t = node_input_features(p, 0, s.routes[0], 3);
    EXPECT_NEAR(t[4], edge_cost(p, 0, 1, 3), 1e-15);
}

TEST(Fictitious, NoopCandidateChangesNothing) {
    auto p = three();
    auto s = make_state(p, {{0, 1, 2}, {}});
    const auto obs = observe_local(p, s, 0);
    const auto pool = observe_pool(p, s);
    auto d = fictitious_representations(obs, pool, 1, 0);
    EXPECT_TRUE(d.added.empty());
    EXPECT_TRUE(d.removed.empty());
}

TEST(Fictitious, AffectedSetByHand) {
    // [d, A, B, d], region A, rule B -> [d, B, A, d]: A (pred B), B (pred d)
    // and the trailing depot (pred A) change their predecessors.
    auto p = three();
    auto s = make_state(p, {{0, 1}, {2}});
    const auto obs = observe_local(p, s, 0);
    auto d = fictitious_representations(obs, observe_pool(p, s), 0, 1);
    std::set<NodeId> added, removed;
    for (auto& n : d.added) added.insert(n.node);
    for (auto& n : d.removed) removed.insert(n.node);
    EXPECT_EQ(added, (std::set<NodeId>{0, 1, 3}));
    EXPECT_EQ(removed, (std::set<NodeId>{0, 1, 3}));
    for (auto& n : d.added) {
        if (n.node == 0) EXPECT_TRUE(same_features(n.features, make_features({0.3, 0.4}, {0.7, 0.2}, 1.0)));
        if (n.node == 1) EXPECT_TRUE(same_features(n.features, make_features({0.7, 0.2}, {0.0, 0.0}, 1.0)));
        if (n.node == 3) EXPECT_TRUE(same_features(n.features, make_features({0.0, 0.0}, {0.3, 0.4}, 1.0)));
    }
}

TEST(Fictitious, PoolRegionAfterLastCustomer) {
    auto p = three();
    auto s = make_state(p, {{0, 1}, {}}, {2});
    auto d = fictitious_representations(observe_local(p, s, 0), observe_pool(p, s), 2, 1);
    ASSERT_EQ(d.removed.size(), 1u);  // trailing depot
    ASSERT_EQ(d.added.size(), 2u);
    EXPECT_EQ(d.added[0].node, 2);
    EXPECT_TRUE(same_features(d.added[0].features, make_features({0.5, 0.9}, {0.7, 0.2}, 1.0)));
}

TEST(Fictitious, DropAndDecline) {
    auto p = three();
    auto s = make_state(p, {{0, 1}, {}}, {2});
    auto decline = fictitious_representations(observe_local(p, s, 0), observe_pool(p, s), 2, P);
    EXPECT_TRUE(decline.added.empty() && decline.removed.empty());
    auto e = make_state(p, {{0, 1, 2}, {}});
    auto drop = fictitious_representations(observe_local(p, e, 0), observe_pool(p, e), 1, P);
    // B leaves; C now follows A.
    ASSERT_EQ(drop.added.size(), 1u);
    EXPECT_EQ(drop.added[0].node, 2);
    EXPECT_EQ(drop.removed.size(), 2u);
}

TEST(Fictitious, IllegalCandidate) {
    auto p = three();
    auto s = make_state(p, {{0, 1}, {2}});
    EXPECT_THROW(fictitious_representations(observe_local(p, s, 0), observe_pool(p, s), 0, 0), IllegalAction);
    EXPECT_THROW(fictitious_representations(observe_local(p, s, 0), observe_pool(p, s), 0, 2), IllegalAction);
    EXPECT_THROW(fictitious_representations(observe_local(p, s, 0), observe_pool(p, s), 2, 0), IllegalAction);
}

TEST(LocalEncoder, Shapes) {
    Model m(ModelConfig{}, 3);
    auto p = three();
    ad::Tape t(false);
    Binder b(t, m.params());
    auto e = m.encode_local_state(b, observe_local(p, make_state(p, {{}, {0, 1, 2}}), 0));
    EXPECT_EQ(e.embeddings.rows(), 2u);
    EXPECT_EQ(e.embeddings.cols(), 128u);
    EXPECT_THROW(m.encode_local_state(b, ad::Array(1, 5)), ShapeError);
}

TEST(LocalEncoder, SequenceSensitiveAndDeterministic) {
    Model m(ModelConfig{}, 3);
    auto p = three();
    ad::Tape t(false);
    Binder b(t, m.params());
    auto s1 = make_state(p, {{0, 1, 2}, {}});
    auto s2 = make_state(p, {{1, 0, 2}, {}});
    auto e1 = m.encode_local_state(b, observe_local(p, s1, 0));
    auto e1b = m.encode_local_state(b, observe_local(p, s1, 0));
    auto e2 = m.encode_local_state(b, observe_local(p, s2, 0));
    EXPECT_EQ(e1.embeddings.value(), e1b.embeddings.value());
    EXPECT_NE(e1.mean.value(), e2.mean.value());
}

TEST(PoolEncoder, EmptyAndSingleton) {
    Model m(tiny_config(), 5);
    ad::Tape t(false);
    Binder b(t, m.params());
    auto e = m.encode_pool(b, std::vector<Point>{});
    EXPECT_FALSE(e.embeddings);
    EXPECT_EQ(e.sentinel.value(), m.params()[m.params().index("pool.sentinel")]);
    EXPECT_EQ(e.mean.value(), ad::Array(1, 6));

    // One node: attention weight is 1, output = tanh((x Wv + bv) Wo + bo).
    const Point x{0.25, 0.75};
    auto s = m.encode_pool(b, std::vector<Point>{x});
    const auto& ps = m.params();
    const auto& Wv = ps[ps.index("pool.v.W")];
    const auto& bv = ps[ps.index("pool.v.b")];
    const auto& Wo = ps[ps.index("pool.out.W")];
    const auto& bo = ps[ps.index("pool.out.b")];
    std::vector<double> v(4);
    for (int j = 0; j < 4; ++j) v[j] = x.x * Wv(0, j) + x.y * Wv(1, j) + bv(0, j);
    for (int k = 0; k < 6; ++k) {
        double z = bo(0, k);
        for (int j = 0; j < 4; ++j) z += v[j] * Wo(j, k);
        EXPECT_NEAR(s.embeddings->value()(0, k), std::tanh(z), 1e-14);
    }
}

TEST(PoolEncoder, PermutationEquivariantBitExact) {
    Model m(ModelConfig{}, 6);
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Point> pts;
        const int n = 2 + trial % 5;
        for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(), rng.uniform()});
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<Point> shuffled;
        for (auto i : perm) shuffled.push_back(pts[i]);
        ad::Tape t(false);
        Binder b(t, m.params());
        auto e1 = m.encode_pool(b, pts);
        auto e2 = m.encode_pool(b, shuffled);
        for (int r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < 128; ++c) {
                ASSERT_EQ(e2.embeddings->value()(r, c), e1.embeddings->value()(perm[r], c));
            }
        }
    }
}

TEST(RuleDistribution, ValidDistributions) {
    Model m(ModelConfig{}, 7);
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        auto inst = manr::testing::random_instance(6, 2, 1000 + trial);
        GlobalState s = inst.initial;
        const AgentId i = static_cast<AgentId>(trial % 2);
        const auto in = s.routes[i].interior();
        if (in.empty()) continue;
        const NodeId w = in[rng.uniform_int(in.size())];
        ad::Tape t(false);
        Binder b(t, m.params());
        auto obs = observe_local(inst.problem, s, i);
        auto pool = observe_pool(inst.problem, s);
        auto ev = m.evaluate_rules(b, obs, m.encode_local_state(b, obs), pool, m.encode_pool(b, pool), w);
        auto probs = rule_distribution(ev);
        ASSERT_EQ(probs.size(), ev.candidates.size());
        double sum = 0.0;
        for (double q : probs) {
            ASSERT_GE(q, 0.0);
            sum += q;
        }
        ASSERT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(RuleDistribution, SingleCandidateAndSymmetry) {
    Model m(ModelConfig{}, 8);
    ad::Tape t(false);
    Binder b(t, m.params());
    Rng rng(3);
    auto region = b.constant(manr::testing::random_array(1, 128, rng));
    auto one = m.rule_logits(b, region, b.constant(manr::testing::random_array(1, 128, rng)),
                             b.constant(manr::testing::random_array(1, 64, rng)));
    EXPECT_DOUBLE_EQ(std::exp(ad::log_softmax(one).value().data[0]), 1.0);
    auto row = manr::testing::random_array(1, 128, rng);
    auto fr = manr::testing::random_array(1, 64, rng);
    auto two = m.rule_logits(b, region, ad::concat_rows({b.constant(row), b.constant(row)}),
                             ad::concat_rows({b.constant(fr), b.constant(fr)}));
    auto pr = ad::softmax(two).value();
    EXPECT_EQ(pr.data[0], pr.data[1]);
    EXPECT_THROW(m.rule_logits(b, region, b.constant(ad::Array(0, 128)), b.constant(ad::Array(0, 64))),
                 ContractError);
}

TEST(Scorer, DeterministicAndRuleSensitive) {
    Model m(ModelConfig{}, 9);
    auto p = three();
    auto s = make_state(p, {{0, 1}, {2}});
    GlobalAction a{{LocalAction{0, 1, 0}, LocalAction::noop(1)}};
    GlobalAction b{{LocalAction{0, 1, 3}, LocalAction::noop(1)}};
    EXPECT_EQ(score_global_action(m, p, s, a), score_global_action(m, p, s, a));
    EXPECT_NE(score_global_action(m, p, s, a), score_global_action(m, p, s, b));
}

TEST(Scorer, RuleChangeOnRandomStates) {
    Model m(ModelConfig{}, 10);
    int differ = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto inst = manr::testing::random_instance(6, 2, 50 + trial);
        const auto& r = inst.initial.routes[0];
        if (r.customer_count() < 2) continue;
        const NodeId w = r.sequence[1];
        GlobalAction a{{LocalAction{0, w, r.sequence[2]}, LocalAction::noop(1)}};
        GlobalAction b{{LocalAction{0, w, kPoolSentinel}, LocalAction::noop(1)}};
        differ += score_global_action(m, inst.problem, inst.initial, a) !=
                  score_global_action(m, inst.problem, inst.initial, b);
    }
    EXPECT_GT(differ, 0);
}

TEST(Scorer, AgentPermutationInvariant) {
    // Two agents sharing a depot location with mirrored customer layouts.
    auto p = make_problem({{0.2, 0.3}, {0.6, 0.1}, {0.2, 0.3}, {0.6, 0.1}}, {{0.5, 0.5}, {0.5, 0.5}});
    auto s = make_state(p, {{0, 1}, {2, 3}});
    Model m(ModelConfig{}, 11);
    GlobalAction a{{LocalAction{0, 0, 1}, LocalAction::noop(1)}};
    GlobalAction b{{LocalAction::noop(0), LocalAction{1, 2, 3}}};
    EXPECT_EQ(score_global_action(m, p, s, a), score_global_action(m, p, s, b));
    GlobalAction c{{LocalAction{0, 1, P}, LocalAction{1, 2, 3}}};
    GlobalAction d{{LocalAction{0, 0, 1}, LocalAction{1, 3, P}}};
    EXPECT_EQ(score_global_action(m, p, s, c), score_global_action(m, p, s, d));
}

TEST(Decentrality, OtherRoutesDoNotMatter) {
    Model m(ModelConfig{}, 12);
    auto p = make_problem({{0.1, 0.2}, {0.3, 0.8}, {0.9, 0.4}, {0.6, 0.6}, {0.2, 0.9}}, {{0, 0}, {1, 1}});
    auto s1 = make_state(p, {{0, 1}, {2, 3, 4}});
    auto s2 = make_state(p, {{0, 1}, {4, 2, 3}});
    const auto pool = observe_pool(p, s1);
    for (NodeId w : {0, 1}) {
        EXPECT_EQ(choose_rule(m, observe_local(p, s1, 0), pool, w, true, nullptr),
                  choose_rule(m, observe_local(p, s2, 0), pool, w, true, nullptr));
    }
}

// Gradient checks on a narrow model so every parameter gets probed.
class ModelGradients : public ::testing::TestWithParam<int> {};

TEST_P(ModelGradients, AllComponents) {
    const int seed = GetParam();
    Model m(tiny_config(), 100 + seed);
    Rng rng(seed);
    auto inst = manr::testing::random_instance(5, 2, 300 + seed);
    const auto& s = inst.initial;
    const auto obs = observe_local(inst.problem, s, 0);
    std::vector<Point> pts;
    for (int i = 0; i < 3; ++i) pts.push_back({rng.uniform(), rng.uniform()});
    auto wts = manr::testing::random_array(1, 200, rng);

    auto weighted = [&](ad::Var v, Binder& b) {
        ad::Array w(v.rows(), v.cols());
        for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] = wts.data[i % 200];
        return ad::sum(ad::mul(v, b.constant(w)));
    };

    auto local = manr::testing::check_model_gradients(
        m, [&](Binder& b) { return weighted(m.encode_local_state(b, obs).embeddings, b); }, rng);
    EXPECT_LT(local.max_rel, 1e-4) << "local encoder";

    auto pool = manr::testing::check_model_gradients(
        m, [&](Binder& b) { return ad::add(weighted(*m.encode_pool(b, pts).embeddings, b), weighted(m.encode_pool(b, pts).sentinel, b)); }, rng);
    EXPECT_LT(pool.max_rel, 1e-4) << "pool encoder";

    const auto& r = s.routes[0];
    ASSERT_GE(r.customer_count(), 1u);
    const NodeId w = r.sequence[1];
    auto rules = manr::testing::check_model_gradients(
        m,
        [&](Binder& b) {
            auto po = observe_pool(inst.problem, s);
            auto ev = m.evaluate_rules(b, obs, m.encode_local_state(b, obs), po, m.encode_pool(b, po), w);
            return weighted(ev.log_probs, b);
        },
        rng);
    EXPECT_LT(rules.max_rel, 1e-4) << "rule policy";

    GlobalAction a{{LocalAction{0, w, kPoolSentinel}, LocalAction::noop(1)}};
    auto q = manr::testing::check_model_gradients(
        m,
        [&](Binder& b) {
            auto enc = encode_state(m, b, inst.problem, s);
            RuleCache cache(m, b, enc);
            return score_global_action(m, b, enc, cache, a);
        },
        rng);
    EXPECT_LT(q.max_rel, 1e-4) << "global scorer";
}

INSTANTIATE_TEST_SUITE_P(Seeds, ModelGradients, ::testing::Range(0, 5));
