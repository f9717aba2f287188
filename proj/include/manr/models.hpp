#pragma once

// Learned components: bidirectional LSTM local state encoder, self-attention
// pool encoder, the attention-based local rule selector (with fictitious
// "what-if" node representations) and the MLP global action scorer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "manr/autodiff.hpp"
#include "manr/game.hpp"
#include "manr/rng.hpp"
#include "manr/routing.hpp"

namespace manr {

struct ModelConfig {
    int hidden = 64;         // LSTM width per direction
    int attention = 64;      // attention / fictitious embedding width
    int scorer_hidden = 128; // global scorer MLP width

    int embed() const { return 2 * hidden; }
    // [mean route | region | rule | fictitious] averaged over agents, plus mean pool.
    int agent_block() const { return 3 * embed() + attention; }
    int scorer_input() const { return agent_block() + embed(); }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class ParamStore {
public:
    std::size_t add(std::string name, ad::Array value) {
        if (index_.count(name)) throw ContractError("duplicate parameter " + name);
        index_[name] = values_.size();
        names_.push_back(std::move(name));
        values_.push_back(std::move(value));
        return values_.size() - 1;
    }

    std::size_t index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidReference("unknown parameter " + name);
        return it->second;
    }

    std::size_t size() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::vector<std::string>& names() const { return names_; }
    std::vector<ad::Array>& values() { return values_; }
    const std::vector<ad::Array>& values() const { return values_; }
    ad::Array& operator[](std::size_t i) { return values_[i]; }
    const ad::Array& operator[](std::size_t i) const { return values_[i]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    std::vector<ad::Array> zeros_like() const {
        std::vector<ad::Array> out;
        out.reserve(values_.size());
        for (const auto& v : values_) out.emplace_back(v.rows, v.cols);
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<ad::Array> values_;
    std::map<std::string, std::size_t> index_;
};

// Lazily binds parameters into one tape.
class Binder {
public:
    Binder(ad::Tape& tape, const ParamStore& params) : tape_(&tape), params_(&params), bound_(params.size()) {}

    ad::Var operator[](std::size_t id) {
        if (!bound_[id]) bound_[id] = tape_->parameter((*params_)[id]);
        return *bound_[id];
    }

    ad::Tape& tape() { return *tape_; }
    const ad::Tape& tape() const { return *tape_; }

    ad::Var constant(ad::Array a) { return tape_->constant(std::move(a)); }

    // Adds d(output)/d(param) of the last backward() into grads.
    void accumulate_grads(std::vector<ad::Array>& grads) const {
        for (std::size_t i = 0; i < bound_.size(); ++i) {
            if (!bound_[i]) continue;
            const ad::Array g = tape_->grad(*bound_[i]);
            for (std::size_t j = 0; j < g.data.size(); ++j) grads[i].data[j] += g.data[j];
        }
    }

private:
    ad::Tape* tape_;
    const ParamStore* params_;
    std::vector<std::optional<ad::Var>> bound_;
};

// ---------------------------------------------------------------------------
// Observations: what one agent may see (its own route and cost, the pool).

struct LocalObservation {
    AgentId agent = 0;
    double velocity = 1.0;
    std::vector<NodeId> sequence;  // route, depot at both ends
    std::vector<Point> coords;     // aligned with sequence

    Route route() const { return Route{agent, sequence}; }
};

struct PoolObservation {
    std::vector<NodeId> ids;  // ascending
    std::vector<Point> coords;

    bool empty() const { return ids.empty(); }
    PoolState state() const { return PoolState{ids}; }
    int index_of(NodeId id) const {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        return (it != ids.end() && *it == id) ? static_cast<int>(it - ids.begin()) : -1;
    }
};

inline LocalObservation observe_local(const RoutingProblem& problem, const Route& route) {
    LocalObservation o;
    o.agent = route.agent;
    o.velocity = problem.velocity(route.agent);
    o.sequence = route.sequence;
    o.coords.reserve(route.sequence.size());
    for (NodeId id : route.sequence) o.coords.push_back(problem.position(id));
    return o;
}

inline LocalObservation observe_local(const RoutingProblem& problem, const GlobalState& state, AgentId agent) {
    return observe_local(problem, state.routes.at(agent));
}

inline PoolObservation observe_pool(const RoutingProblem& problem, const PoolState& pool) {
    PoolObservation o;
    o.ids = pool.members;
    for (NodeId id : o.ids) o.coords.push_back(problem.position(id));
    return o;
}

inline PoolObservation observe_pool(const RoutingProblem& problem, const GlobalState& state) {
    return observe_pool(problem, state.pool);
}

using NodeFeatures = std::array<double, 5>;

inline NodeFeatures make_features(const Point& v, const Point& pred, double velocity) {
    return {v.x, v.y, pred.x, pred.y, distance(v, pred) / velocity};
}

// (x, y, pred x, pred y, own cost to pred). The leading depot is its own
// predecessor.
inline NodeFeatures node_input_features(const LocalObservation& obs, std::size_t position) {
    if (position >= obs.sequence.size()) throw InvalidReference("route position out of range");
    const Point& v = obs.coords[position];
    const Point& p = position == 0 ? v : obs.coords[position - 1];
    return make_features(v, p, obs.velocity);
}

inline NodeFeatures node_input_features(const RoutingProblem& problem, AgentId agent, const Route& route,
                                        std::size_t position) {
    if (route.agent != agent) throw InvariantViolation("route belongs to a different agent");
    return node_input_features(observe_local(problem, route), position);
}

inline ad::Array route_features(const LocalObservation& obs) {
    ad::Array f(obs.sequence.size(), 5);
    for (std::size_t i = 0; i < obs.sequence.size(); ++i) {
        const NodeFeatures nf = node_input_features(obs, i);
        std::copy(nf.begin(), nf.end(), f.data.begin() + i * 5);
    }
    return f;
}

struct FictitiousNode {
    NodeId node;
    NodeFeatures features;
};

// Nodes whose representation changes under a hypothetical move: `added`
// carries post-move features, `removed` the current ones they replace.
struct FictitiousDelta {
    std::vector<FictitiousNode> added;
    std::vector<FictitiousNode> removed;
};

inline FictitiousDelta fictitious_representations(const LocalObservation& obs, const PoolObservation& pool,
                                                  NodeId region, NodeId rule) {
    const Route route = obs.route();
    const PoolState ps = pool.state();
    std::vector<NodeId> rules;
    try {
        rules = legal_rules(route, ps, region, ps.empty() ? std::nullopt : std::optional<NodeId>(region));
    } catch (const IllegalAction& e) {
        throw IllegalAction(std::string("illegal rule candidate: ") + e.what());
    }
    if (std::find(rules.begin(), rules.end(), rule) == rules.end()) {
        throw IllegalAction("illegal rule candidate " + std::to_string(rule) + " for region " + std::to_string(region));
    }

    // Hypothetical post-move sequence with coordinates.
    std::vector<NodeId> seq = obs.sequence;
    std::vector<Point> pts = obs.coords;
    if (ps.empty()) {
        const int wpos = route.position_of(region);
        const Point wpt = pts[wpos];
        seq.erase(seq.begin() + wpos);
        pts.erase(pts.begin() + wpos);
        if (rule != kPoolSentinel) {
            const auto upos = std::find(seq.begin(), seq.end() - 1, rule) - seq.begin();
            seq.insert(seq.begin() + upos + 1, region);
            pts.insert(pts.begin() + upos + 1, wpt);
        }
    } else if (rule != kPoolSentinel) {
        const Point wpt = pool.coords[pool.index_of(region)];
        const auto upos = std::find(seq.begin(), seq.end() - 1, rule) - seq.begin();
        seq.insert(seq.begin() + upos + 1, region);
        pts.insert(pts.begin() + upos + 1, wpt);
    }

    // Predecessor maps over positions 1.. (leading depot never changes).
    auto preds = [](const std::vector<NodeId>& s) {
        std::map<NodeId, NodeId> m;
        for (std::size_t i = 1; i < s.size(); ++i) m[s[i]] = s[i - 1];
        return m;
    };
    const auto old_pred = preds(obs.sequence);
    const auto new_pred = preds(seq);

    FictitiousDelta out;
    for (std::size_t i = 1; i < seq.size(); ++i) {
        auto it = old_pred.find(seq[i]);
        if (it == old_pred.end() || it->second != seq[i - 1]) {
            out.added.push_back({seq[i], make_features(pts[i], pts[i - 1], obs.velocity)});
        }
    }
    for (std::size_t i = 1; i < obs.sequence.size(); ++i) {
        auto it = new_pred.find(obs.sequence[i]);
        if (it == new_pred.end() || it->second != obs.sequence[i - 1]) {
            out.removed.push_back({obs.sequence[i], node_input_features(obs, i)});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

struct AgentEncoding {
    ad::Var embeddings;  // L x E, one row per route entry
    ad::Var mean;        // 1 x E
};

struct PoolEncoding {
    std::optional<ad::Var> embeddings;  // P x E in PoolObservation order
    ad::Var sentinel;                   // 1 x E
    ad::Var mean;                       // 1 x E, zeros for an empty pool
};

struct RuleEvaluation {
    std::vector<NodeId> candidates;  // legal_rules order, sentinel last
    ad::Var region;                  // 1 x E
    ad::Var rules;                   // C x E
    ad::Var fictitious;              // C x A
    ad::Var logits;                  // 1 x C
    ad::Var log_probs;               // 1 x C

    std::size_t index_of(NodeId rule) const {
        auto it = std::find(candidates.begin(), candidates.end(), rule);
        if (it == candidates.end()) throw IllegalAction("rule " + std::to_string(rule) + " is not a candidate");
        return static_cast<std::size_t>(it - candidates.begin());
    }
};

class Model {
public:
    Model() : Model(ModelConfig{}, 0) {}

    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(seed);
        const std::size_t H = cfg.hidden, E = cfg.embed(), A = cfg.attention, S = cfg.scorer_hidden;
        auto dense = [&](const std::string& name, std::size_t in, std::size_t out, bool bias = true) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            std::size_t id = params_.add(name + ".W", uniform(in, out, bound, rng));
            if (bias) params_.add(name + ".b", uniform(1, out, bound, rng));
            return id;
        };
        dense("local.in", 5, H);
        for (const char* dir : {"local.fwd", "local.bwd"}) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(H));
            params_.add(std::string(dir) + ".Wx", uniform(H, 4 * H, bound, rng));
            params_.add(std::string(dir) + ".Wh", uniform(H, 4 * H, bound, rng));
            ad::Array b = uniform(1, 4 * H, bound, rng);
            for (std::size_t j = H; j < 2 * H; ++j) b.data[j] = 1.0;  // forget gate
            params_.add(std::string(dir) + ".b", std::move(b));
        }
        dense("pool.q", 2, A, false);
        dense("pool.k", 2, A, false);
        dense("pool.v", 2, A);
        dense("pool.out", A, E);
        params_.add("pool.sentinel", uniform(1, E, 1.0 / std::sqrt(static_cast<double>(E)), rng));
        dense("fict", 5, A);
        dense("rule.region", E, A, false);
        dense("rule.cand", E, A, false);
        dense("rule.fict", A, A);
        dense("rule.v", A, 1, false);
        dense("critic.l1", cfg.scorer_input(), S);
        dense("critic.l2", S, S);
        dense("critic.out", S, 1);
        cache_ids();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Bidirectional LSTM over the route's L x 5 feature rows.
    AgentEncoding encode_local_state(Binder& b, const ad::Array& features) const {
        using namespace ad;
        if (features.rows < 2 || features.cols != 5) {
            throw ShapeError("local encoder expects L x 5 features with L >= 2, got " + features.shape_string());
        }
        Var x = b.constant(features);
        Var proj = add(matmul(x, b[id_.in_W]), b[id_.in_b]);
        const std::size_t L = features.rows;
        std::vector<Var> fwd = run_lstm(b, proj, id_.fwd, L, false);
        std::vector<Var> bwd = run_lstm(b, proj, id_.bwd, L, true);
        Var emb = concat_cols({concat_rows(fwd), concat_rows(bwd)});
        return AgentEncoding{emb, mean_rows(emb)};
    }

    AgentEncoding encode_local_state(Binder& b, const LocalObservation& obs) const {
        return encode_local_state(b, route_features(obs));
    }

    // Single-head self-attention over pool coordinates. Rows are processed in
    // a canonical coordinate order so the output is exactly
    // permutation-equivariant.
    PoolEncoding encode_pool(Binder& b, std::span<const Point> coords) const {
        using namespace ad;
        const std::size_t P = coords.size();
        const std::size_t E = cfg_.embed();
        PoolEncoding out{std::nullopt, b[id_.sentinel], b.constant(Array(1, E))};
        if (P == 0) return out;
        std::vector<std::size_t> order(P);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
            return coords[i].x != coords[j].x ? coords[i].x < coords[j].x : coords[i].y < coords[j].y;
        });
        Array x(P, 2);
        for (std::size_t r = 0; r < P; ++r) {
            x(r, 0) = coords[order[r]].x;
            x(r, 1) = coords[order[r]].y;
        }
        Var X = b.constant(std::move(x));
        Var q = matmul(X, b[id_.q_W]);
        Var k = matmul(X, b[id_.k_W]);
        Var v = add(matmul(X, b[id_.v_W]), b[id_.v_b]);
        Var att = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(cfg_.attention))));
        Var o = tanh(add(matmul(matmul(att, v), b[id_.out_W]), b[id_.out_b]));
        std::vector<std::size_t> inverse(P);
        for (std::size_t r = 0; r < P; ++r) inverse[order[r]] = r;
        Var emb = gather_rows(o, inverse);
        out.embeddings = emb;
        out.mean = mean_rows(emb);
        return out;
    }

    PoolEncoding encode_pool(Binder& b, const PoolObservation& pool) const { return encode_pool(b, pool.coords); }

    // Shared feed-forward embedding of 5-vectors: r x 5 -> r x A.
    ad::Var embed_fictitious(Binder& b, const ad::Array& rows) const {
        using namespace ad;
        return tanh(add(matmul(b.constant(rows), b[id_.fict_W]), b[id_.fict_b]));
    }

    // Per-candidate summary: sum of embeddings of post-move representations
    // minus those they replace. C x A; exactly zero for a no-op candidate.
    ad::Var fictitious_summary(Binder& b, std::span<const FictitiousDelta> deltas) const {
        using namespace ad;
        const std::size_t C = deltas.size();
        const std::size_t A = cfg_.attention;
        std::size_t R = 0;
        for (const auto& d : deltas) R += d.added.size() + d.removed.size();
        if (R == 0) return b.constant(Array(C, A));
        Array rows(R, 5);
        Array select(C, R);
        std::size_t r = 0;
        for (std::size_t c = 0; c < C; ++c) {
            for (const auto& n : deltas[c].added) {
                std::copy(n.features.begin(), n.features.end(), rows.data.begin() + r * 5);
                select(c, r++) = 1.0;
            }
            for (const auto& n : deltas[c].removed) {
                std::copy(n.features.begin(), n.features.end(), rows.data.begin() + r * 5);
                select(c, r++) = -1.0;
            }
        }
        return matmul(b.constant(std::move(select)), embed_fictitious(b, rows));
    }

    // Additive attention score of each candidate rule: 1 x C logits.
    ad::Var rule_logits(Binder& b, ad::Var region, ad::Var rules, ad::Var fictitious) const {
        using namespace ad;
        const std::size_t C = rules.rows();
        if (C == 0) throw ContractError("rule selector needs at least one candidate");
        Var hr = matmul(region, b[id_.reg_W]);
        Var h = add(add(matmul(rules, b[id_.cand_W]), matmul(fictitious, b[id_.rfict_W])), add(hr, b[id_.rfict_b]));
        return transpose(matmul(tanh(h), b[id_.v_att]));
    }

    // Rule distribution for one agent and region from agent-local inputs only.
    RuleEvaluation evaluate_rules(Binder& b, const LocalObservation& obs, const AgentEncoding& local,
                                  const PoolObservation& pool, const PoolEncoding& pool_enc, NodeId region) const {
        using namespace ad;
        const Route route = obs.route();
        const PoolState ps = pool.state();
        RuleEvaluation ev;
        ev.candidates = legal_rules(route, ps, region, ps.empty() ? std::nullopt : std::optional<NodeId>(region));
        if (ps.empty()) {
            ev.region = row(local.embeddings, static_cast<std::size_t>(route.position_of(region)));
        } else {
            if (!pool_enc.embeddings) throw ContractError("pool encoding missing for a filled pool");
            ev.region = row(*pool_enc.embeddings, static_cast<std::size_t>(pool.index_of(region)));
        }
        std::vector<std::size_t> positions;
        for (NodeId u : ev.candidates) {
            if (u == kPoolSentinel) continue;
            positions.push_back(u == obs.sequence.front()
                                    ? 0
                                    : static_cast<std::size_t>(route.position_of(u)));
        }
        std::vector<Var> parts;
        if (!positions.empty()) parts.push_back(gather_rows(local.embeddings, positions));
        parts.push_back(pool_enc.sentinel);
        ev.rules = parts.size() == 1 ? parts[0] : concat_rows(parts);
        std::vector<FictitiousDelta> deltas;
        deltas.reserve(ev.candidates.size());
        for (NodeId u : ev.candidates) deltas.push_back(fictitious_representations(obs, pool, region, u));
        ev.fictitious = fictitious_summary(b, deltas);
        ev.logits = rule_logits(b, ev.region, ev.rules, ev.fictitious);
        ev.log_probs = log_softmax(ev.logits);
        return ev;
    }

    // Per-agent block of the scorer input for candidate rule index c
    // (nullopt = NoOp): 1 x agent_block.
    ad::Var agent_block(Binder& b, const AgentEncoding& local, const RuleEvaluation* ev, std::size_t c) const {
        using namespace ad;
        if (!ev) {
            return concat_cols({local.mean, b.constant(Array(1, cfg_.agent_block() - cfg_.embed()))});
        }
        return concat_cols({local.mean, ev->region, row(ev->rules, c), row(ev->fictitious, c)});
    }

    // Blocks for every candidate rule of one agent: C x agent_block.
    ad::Var agent_blocks_all_rules(Binder&, const AgentEncoding& local, const RuleEvaluation& ev) const {
        using namespace ad;
        const std::size_t C = ev.candidates.size();
        return concat_cols({broadcast_rows(local.mean, C), broadcast_rows(ev.region, C), ev.rules, ev.fictitious});
    }

    // MLP scorer over B x scorer_input rows -> B x 1.
    ad::Var score(Binder& b, ad::Var input) const {
        using namespace ad;
        if (input.cols() != static_cast<std::size_t>(cfg_.scorer_input())) {
            throw ShapeError("scorer input width " + std::to_string(input.cols()) + " != " +
                             std::to_string(cfg_.scorer_input()));
        }
        Var h1 = relu(add(matmul(input, b[id_.c1_W]), b[id_.c1_b]));
        Var h2 = relu(add(matmul(h1, b[id_.c2_W]), b[id_.c2_b]));
        return add(matmul(h2, b[id_.c3_W]), b[id_.c3_b]);
    }

    // Scorer input from the mean of agent blocks and the mean pool embedding.
    ad::Var scorer_input(std::span<const ad::Var> blocks, const PoolEncoding& pool) const {
        using namespace ad;
        Var acc = blocks[0];
        for (std::size_t i = 1; i < blocks.size(); ++i) acc = add(acc, blocks[i]);
        acc = scale(acc, 1.0 / static_cast<double>(blocks.size()));
        return concat_cols({acc, broadcast_rows(pool.mean, acc.rows())});
    }

private:
    struct LstmIds {
        std::size_t Wx, Wh, b;
    };
    struct Ids {
        std::size_t in_W, in_b;
        LstmIds fwd, bwd;
        std::size_t q_W, k_W, v_W, v_b, out_W, out_b, sentinel;
        std::size_t fict_W, fict_b;
        std::size_t reg_W, cand_W, rfict_W, rfict_b, v_att;
        std::size_t c1_W, c1_b, c2_W, c2_b, c3_W, c3_b;
    };

    static ad::Array uniform(std::size_t r, std::size_t c, double bound, Rng& rng) {
        ad::Array a(r, c);
        for (double& x : a.data) x = rng.uniform(-bound, bound);
        return a;
    }

    void cache_ids() {
        auto p = [&](const char* n) { return params_.index(n); };
        id_.in_W = p("local.in.W");
        id_.in_b = p("local.in.b");
        id_.fwd = {p("local.fwd.Wx"), p("local.fwd.Wh"), p("local.fwd.b")};
        id_.bwd = {p("local.bwd.Wx"), p("local.bwd.Wh"), p("local.bwd.b")};
        id_.q_W = p("pool.q.W");
        id_.k_W = p("pool.k.W");
        id_.v_W = p("pool.v.W");
        id_.v_b = p("pool.v.b");
        id_.out_W = p("pool.out.W");
        id_.out_b = p("pool.out.b");
        id_.sentinel = p("pool.sentinel");
        id_.fict_W = p("fict.W");
        id_.fict_b = p("fict.b");
        id_.reg_W = p("rule.region.W");
        id_.cand_W = p("rule.cand.W");
        id_.rfict_W = p("rule.fict.W");
        id_.rfict_b = p("rule.fict.b");
        id_.v_att = p("rule.v.W");
        id_.c1_W = p("critic.l1.W");
        id_.c1_b = p("critic.l1.b");
        id_.c2_W = p("critic.l2.W");
        id_.c2_b = p("critic.l2.b");
        id_.c3_W = p("critic.out.W");
        id_.c3_b = p("critic.out.b");
    }

    std::vector<ad::Var> run_lstm(Binder& b, ad::Var proj, const LstmIds& ids, std::size_t L, bool reverse) const {
        using namespace ad;
        const std::size_t H = cfg_.hidden;
        Var xw = add(matmul(proj, b[ids.Wx]), b[ids.b]);
        std::vector<Var> out(L);
        std::optional<Var> h, c;
        for (std::size_t s = 0; s < L; ++s) {
            const std::size_t t = reverse ? L - 1 - s : s;
            Var z = row(xw, t);
            if (h) z = add(z, matmul(*h, b[ids.Wh]));
            Var ig = sigmoid(slice_cols(z, 0, H));
            Var fg = sigmoid(slice_cols(z, H, 2 * H));
            Var gg = tanh(slice_cols(z, 2 * H, 3 * H));
            Var og = sigmoid(slice_cols(z, 3 * H, 4 * H));
            Var cn = c ? add(mul(fg, *c), mul(ig, gg)) : mul(ig, gg);
            Var hn = mul(og, tanh(cn));
            c = cn;
            h = hn;
            out[t] = hn;
        }
        return out;
    }

    ModelConfig cfg_;
    ParamStore params_;
    Ids id_{};
};

// ---------------------------------------------------------------------------
// Whole-state helpers used by training and evaluation.

struct StateEncoding {
    std::vector<LocalObservation> locals;
    PoolObservation pool_obs;
    std::vector<AgentEncoding> agents;
    PoolEncoding pool;
};

inline StateEncoding encode_state(const Model& model, Binder& b, const RoutingProblem& problem,
                                  const GlobalState& state) {
    StateEncoding enc;
    enc.pool_obs = observe_pool(problem, state);
    enc.pool = model.encode_pool(b, enc.pool_obs);
    for (AgentId i = 0; i < state.agents(); ++i) {
        enc.locals.push_back(observe_local(problem, state, i));
        enc.agents.push_back(model.encode_local_state(b, enc.locals.back()));
    }
    return enc;
}

// Memoizes rule evaluations per (agent, region) within one state.
class RuleCache {
public:
    RuleCache(const Model& model, Binder& b, const StateEncoding& enc) : model_(&model), b_(&b), enc_(&enc) {}

    const RuleEvaluation& get(AgentId agent, NodeId region) {
        const auto key = std::make_pair(agent, region);
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            it = cache_
                     .emplace(key, model_->evaluate_rules(*b_, enc_->locals[agent], enc_->agents[agent],
                                                          enc_->pool_obs, enc_->pool, region))
                     .first;
        }
        return it->second;
    }

private:
    const Model* model_;
    Binder* b_;
    const StateEncoding* enc_;
    std::map<std::pair<AgentId, NodeId>, RuleEvaluation> cache_;
};

// Q(s, a) for a batch of global actions: Z x 1.
inline ad::Var score_global_actions(const Model& model, Binder& b, const StateEncoding& enc, RuleCache& rules,
                                    std::span<const GlobalAction> actions) {
    using namespace ad;
    std::vector<Var> rows;
    rows.reserve(actions.size());
    for (const GlobalAction& a : actions) {
        std::vector<Var> blocks;
        for (const LocalAction& la : a.locals) {
            if (la.is_noop()) {
                blocks.push_back(model.agent_block(b, enc.agents[la.agent], nullptr, 0));
            } else {
                const RuleEvaluation& ev = rules.get(la.agent, *la.region);
                blocks.push_back(model.agent_block(b, enc.agents[la.agent], &ev, ev.index_of(la.rule)));
            }
        }
        rows.push_back(model.scorer_input(blocks, enc.pool));
    }
    return model.score(b, rows.size() == 1 ? rows[0] : concat_rows(rows));
}

inline ad::Var score_global_action(const Model& model, Binder& b, const StateEncoding& enc, RuleCache& rules,
                                   const GlobalAction& action) {
    return score_global_actions(model, b, enc, rules, std::span<const GlobalAction>(&action, 1));
}

// Convenience: value-only Q(s, a).
inline double score_global_action(const Model& model, const RoutingProblem& problem, const GlobalState& state,
                                  const GlobalAction& action) {
    ad::Tape tape(false);
    Binder b(tape, model.params());
    const StateEncoding enc = encode_state(model, b, problem, state);
    RuleCache rules(model, b, enc);
    return score_global_action(model, b, enc, rules, action).item();
}

// Probability vector over the candidates of a rule evaluation.
inline std::vector<double> rule_distribution(const RuleEvaluation& ev) {
    const ad::Array& lp = ev.log_probs.value();
    std::vector<double> p(lp.data.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp.data[i]);
    return p;
}

inline std::size_t argmax_index(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

inline std::size_t sample_index(std::span<const double> probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

// Decentral rule choice: sees only the agent's own route/cost and the pool.
inline NodeId choose_rule(const Model& model, const LocalObservation& obs, const PoolObservation& pool, NodeId region,
                          bool greedy, Rng* rng) {
    ad::Tape tape(false);
    Binder b(tape, model.params());
    const AgentEncoding local = model.encode_local_state(b, obs);
    const PoolEncoding penc = model.encode_pool(b, pool);
    const RuleEvaluation ev = model.evaluate_rules(b, obs, local, pool, penc, region);
    const std::vector<double> p = rule_distribution(ev);
    const std::size_t idx = greedy ? argmax_index(ev.logits.value().data)
                                   : sample_index(p, *rng);
    return ev.candidates[idx];
}

}  // namespace manr
