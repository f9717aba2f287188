#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"

using namespace manr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("manr_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Dataset, RoundTripBitExact) {
    GenConfig g;
    g.customers = 7;
    g.agents = 3;
    g.size = 10;
    g.seed = 5;
    const Dataset d = generate_dataset(g);
    const fs::path dir = scratch("ds");
    write_dataset(dir, d, g);
    const InstanceFile f = read_instances(dir / "train.jsonl");
    ASSERT_EQ(f.instances.size(), d.train.size());
    for (std::size_t i = 0; i < d.train.size(); ++i) {
        EXPECT_EQ(f.instances[i].problem, d.train[i].problem);
        EXPECT_EQ(f.instances[i].initial, d.train[i].initial);
    }
    EXPECT_EQ(gen_config_from_json(f.header.at("gen")), g);
    EXPECT_EQ(f.header.at("count").get<int>(), 8);
    // Writing again gives identical bytes.
    const std::string before = slurp(dir / "test.jsonl");
    write_dataset(dir, d, g);
    EXPECT_EQ(slurp(dir / "test.jsonl"), before);
}

TEST(Dataset, VersionMismatchNamesBoth) {
    const fs::path dir = scratch("ver");
    std::ofstream(dir / "bad.jsonl") << R"({"format":"manr-dataset","version":99,"split":"test","count":0})" << "\n";
    try {
        read_instances(dir / "bad.jsonl");
        FAIL() << "expected a version error";
    } catch (const VersionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("99"), std::string::npos);
        EXPECT_NE(msg.find("version 1"), std::string::npos);
    }
    std::ofstream(dir / "junk.jsonl") << "not json\n";
    EXPECT_THROW(read_instances(dir / "junk.jsonl"), FormatError);
    EXPECT_THROW(read_instances(dir / "missing.jsonl"), IoError);
}

TEST(Dataset, InvalidInitialSolutionRejected) {
    const fs::path dir = scratch("inv");
    std::ofstream(dir / "x.jsonl")
        << R"({"format":"manr-dataset","version":1,"split":"test","count":1})" << "\n"
        << R"({"index":0,"customers":[[0.1,0.1],[0.2,0.2]],"depots":[[0.5,0.5]],"velocities":[1.0],"initial":[[2,0,2]]})"
        << "\n";
    EXPECT_THROW(read_instances(dir / "x.jsonl"), FormatError);
}

TEST(Checkpoint, RoundTripBitExact) {
    Model m(manr::testing::tiny_config(), 3);
    TrainingConfig tc;
    tc.seed = 17;
    TrainingState st = init_training(m, tc);
    Rng rng(4);
    for (auto& a : st.optimizer.m) {
        for (double& x : a.data) x = rng.normal();
    }
    for (auto& a : st.optimizer.v) {
        for (double& x : a.data) x = rng.uniform();
    }
    st.optimizer.step = 123;
    st.epoch = 4;
    st.rng.normal();
    GenConfig g;
    const fs::path dir = scratch("ck");
    save_checkpoint(dir / "a.ckpt", m, tc, g, st);
    const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(ck.model, m.config());
    EXPECT_EQ(ck.training, tc);
    ASSERT_TRUE(ck.gen);
    EXPECT_EQ(*ck.gen, g);
    EXPECT_TRUE(ck.state == st);
    EXPECT_EQ(ck.params, m.params().values());
    const Model back = model_from_checkpoint(ck);
    EXPECT_EQ(back.params().values(), m.params().values());
    save_checkpoint(dir / "b.ckpt", back, ck.training, ck.gen, ck.state);
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

TEST(Checkpoint, CorruptionDetected) {
    Model m(manr::testing::tiny_config(), 3);
    TrainingConfig tc;
    const fs::path dir = scratch("bad");
    save_checkpoint(dir / "a.ckpt", m, tc, std::nullopt, init_training(m, tc));
    std::string bytes = slurp(dir / "a.ckpt");
    std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 8);
    EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt"), FormatError);
    std::ofstream(dir / "extra.ckpt", std::ios::binary) << bytes << "x";
    EXPECT_THROW(load_checkpoint(dir / "extra.ckpt"), FormatError);
    std::string v2 = bytes;
    v2.replace(v2.find("MANR-CKPT 1"), 11, "MANR-CKPT 2");
    std::ofstream(dir / "v2.ckpt", std::ios::binary) << v2;
    EXPECT_THROW(load_checkpoint(dir / "v2.ckpt"), VersionError);

    Checkpoint ck = load_checkpoint(dir / "a.ckpt");
    ck.params[0] = ad::Array(1, 1);
    EXPECT_THROW(model_from_checkpoint(ck), ShapeError);
}

TEST(Config, TrainingOverrides) {
    TrainingConfig base = TrainingConfig::defaults(10, 2);
    const TrainingConfig c = training_config_from_json(json{{"epochs", 5}, {"batch_size", 8}}, base);
    EXPECT_EQ(c.epochs, 5);
    EXPECT_EQ(c.batch_size, 8);
    EXPECT_EQ(c.steps, 30);
    EXPECT_THROW(training_config_from_json(json{{"epohcs", 5}}, base), FormatError);
    EXPECT_EQ(training_config_from_json(to_json(c)), c);
    ModelConfig mc{16, 8, 12};
    EXPECT_EQ(model_config_from_json(to_json(mc)), mc);
}

TEST(Trace, RecordsMatchEngine) {
    auto inst = manr::testing::random_instance(6, 2, 12);
    Rng rng(1);
    auto provider = [](const GlobalState& s, const Offers& offers, Rng& r) {
        return manr::testing::random_legal_action(s, offers, r);
    };
    const EpisodeTrace tr = rollout_episode(inst.problem, inst.initial, provider, 25, RewardConfig::for_agents(2), rng);
    const fs::path dir = scratch("tr");
    write_trace(dir / "t.jsonl", inst.problem, tr, json{{"seed", 1}});
    std::ifstream f(dir / "t.jsonl");
    std::string line;
    std::getline(f, line);
    const json header = json::parse(line);
    EXPECT_EQ(header.at("format"), "manr-trace");
    EXPECT_EQ(header.at("steps"), 25);
    std::vector<GlobalState> states;
    std::vector<json> recs;
    while (std::getline(f, line)) {
        recs.push_back(json::parse(line));
        states.push_back(state_from_json(recs.back()));
    }
    ASSERT_EQ(states.size(), 26u);
    const RewardConfig rc = RewardConfig::for_agents(2);
    for (int t = 1; t <= 25; ++t) {
        EXPECT_EQ(states[t], tr.states[t]);
        const double r = compute_reward(std::span<const GlobalState>(states.data(), t + 1), rc, inst.problem);
        EXPECT_EQ(recs[t].at("reward").get<double>(), r);
        EXPECT_EQ(recs[t].at("pool").empty(), states[t].pool.empty());
        for (const auto& a : recs[t].at("actions")) {
            const std::string lab = a.at("label");
            if (lab == "drop") EXPECT_FALSE(recs[t].at("pool").empty());
        }
    }
}
