#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"

using namespace manr;

TEST(Sampling, TruncatedNormalRadius) {
    Rng rng(1);
    const Point c{0.5, 0.5};
    const int N = 40000;
    double r = 0.0;
    for (int i = 0; i < N; ++i) {
        const Point q = sample_truncated_normal(c, 0.1, rng);
        ASSERT_TRUE(q.x >= 0 && q.x <= 1 && q.y >= 0 && q.y <= 1);
        r += std::hypot(q.x - c.x, q.y - c.y);
    }
    // Rayleigh mean sigma * sqrt(pi / 2); truncation at 5 sigma is negligible.
    EXPECT_NEAR(r / N, 0.1 * std::sqrt(std::numbers::pi / 2), 0.002);
}

TEST(Sampling, CornerDepotStaysInside) {
    Rng rng(2);
    for (int i = 0; i < 5000; ++i) {
        const Point q = sample_truncated_normal({0.0, 1.0}, 0.1, rng);
        ASSERT_TRUE(q.x >= 0 && q.x <= 1 && q.y >= 0 && q.y <= 1);
    }
}

TEST(Sampling, ProblemBounds) {
    GenConfig g;
    g.customers = 20;
    g.agents = 3;
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const RoutingProblem p = sample_problem(g, rng);
        ASSERT_EQ(p.customers(), 20);
        ASSERT_EQ(p.agents(), 3);
        for (double v : p.velocities()) ASSERT_TRUE(v >= 0.95 && v <= 1.0);
        for (const Point& q : p.customer_positions()) ASSERT_TRUE(q.x >= 0 && q.x <= 1 && q.y >= 0 && q.y <= 1);
        for (const Point& q : p.depot_positions()) ASSERT_TRUE(q.x >= 0 && q.x <= 1 && q.y >= 0 && q.y <= 1);
    }
}

TEST(InitialSolution, EvenSplitFeasible) {
    GenConfig g;
    g.customers = 10;
    g.agents = 3;
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        const Instance inst = sample_instance(g, rng);
        ASSERT_TRUE(is_feasible(inst.problem, inst.initial));
        ASSERT_TRUE(validate_state(inst.problem, inst.initial).empty());
        std::vector<std::size_t> sizes;
        for (const auto& r : inst.initial.routes) sizes.push_back(r.customer_count());
        std::sort(sizes.begin(), sizes.end());
        EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 4}));
    }
}

TEST(InitialSolution, NearestNeighbourTours) {
    auto inst = manr::testing::random_instance(8, 2, 9);
    for (AgentId i = 0; i < 2; ++i) {
        const auto cs = inst.initial.routes[i].interior();
        std::vector<NodeId> v(cs.begin(), cs.end());
        EXPECT_EQ(nearest_neighbour_order(inst.problem, i, v), v);
    }
}

TEST(Splits, Sizes) {
    GenConfig g;
    auto s = split_sizes(g);
    EXPECT_EQ(s.train, 5024);
    EXPECT_EQ(s.validation, 628);
    EXPECT_EQ(s.test, 628);
    g.size = 10;
    s = split_sizes(g);
    EXPECT_EQ(s.train, 8);
    EXPECT_EQ(s.validation, 1);
    EXPECT_EQ(s.test, 1);
    g.size = 0;
    const Dataset d = generate_dataset(g);
    EXPECT_TRUE(d.train.empty() && d.validation.empty() && d.test.empty());
}

TEST(Dataset, DeterministicPerIndex) {
    GenConfig g;
    g.size = 12;
    g.seed = 77;
    const Dataset a = generate_dataset(g);
    const Dataset b = generate_dataset(g);
    ASSERT_EQ(a.train.size(), 9u);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].problem, b.train[i].problem);
        EXPECT_EQ(a.train[i].initial, b.train[i].initial);
    }
    g.seed = 78;
    const Dataset c = generate_dataset(g);
    EXPECT_FALSE(a.train[0].problem == c.train[0].problem);
}

TEST(Config, Rejections) {
    GenConfig g;
    g.agents = 0;
    EXPECT_THROW(g.validate(), ContractError);
    g = GenConfig{};
    g.customers = 1;
    g.agents = 2;
    EXPECT_THROW(g.validate(), ContractError);
    g = GenConfig{};
    g.train_fraction = 0.95;
    EXPECT_THROW(generate_dataset(g), ContractError);
}
