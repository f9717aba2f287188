#pragma once

// Centralized training: Z sampled local candidates per agent, zipped into
// global candidates, epsilon-greedy selection by the critic, and the joint
// critic + policy-gradient loss.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "manr/autodiff.hpp"
#include "manr/datagen.hpp"
#include "manr/game.hpp"
#include "manr/inference.hpp"
#include "manr/models.hpp"
#include "manr/optim.hpp"

namespace manr {

struct TrainingConfig {
    int steps = 30;      // T
    int candidates = 5;  // Z
    double epsilon = 0.15;
    double gamma = 0.5;
    double alpha = 1e-5;
    int epochs = 30;
    int batch_size = 32;
    int window = 0;  // reward window m; 0 means agents + 1
    double learning_rate = 5e-4;
    double lr_decay = 0.9;
    long decay_steps = 200;
    double clip_norm = 0.05;
    int validation_steps = kDefaultInferenceSteps;
    std::uint64_t seed = 0;

    // Per-size defaults; sizes above 10 customers use the 20-node column.
    static TrainingConfig defaults(int customers, int agents) {
        TrainingConfig c;
        if (customers > 10) {
            c.steps = 40;
            c.candidates = 10;
            c.alpha = agents >= 5 ? 5e-6 : 1e-6;
            c.epochs = agents >= 5 ? 23 : 30;
        }
        return c;
    }

    RewardConfig reward(int agents) const {
        RewardConfig r = RewardConfig::for_agents(agents);
        if (window > 0) r.m = window;
        return r;
    }

    void validate() const {
        if (candidates < 1) throw ContractError("Z must be >= 1");
        if (epsilon < 0.0 || epsilon > 1.0) throw ContractError("epsilon must lie in [0, 1]");
        if (!(gamma > 0.0) || gamma > 1.0) throw ContractError("gamma must lie in (0, 1]");
        if (!(alpha > 0.0)) throw ContractError("alpha must be positive");
        if (steps < 0 || epochs < 0 || batch_size < 1 || window < 0) throw ContractError("bad training sizes");
        if (!(learning_rate > 0.0) || !(clip_norm > 0.0) || decay_steps < 1) throw ContractError("bad optimizer settings");
    }

    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct LocalCandidate {
    LocalAction action;
    double log_prob = 0.0;  // of the sampled rule; 0 for NoOp
    std::vector<NodeId> rules;
    std::vector<double> probs;
};

// candidates[agent][slot]
using CandidateSet = std::vector<std::vector<LocalCandidate>>;

inline CandidateSet sample_candidates(RuleCache& cache, const GlobalState& state, const Offers& offers, int Z,
                                      Rng& rng) {
    if (Z < 1) throw ContractError("Z must be >= 1");
    CandidateSet out(static_cast<std::size_t>(state.agents()));
    for (AgentId i = 0; i < state.agents(); ++i) {
        for (int z = 0; z < Z; ++z) {
            LocalCandidate c;
            const std::optional<NodeId> region = sample_region(state, i, offers[i], rng);
            if (!region) {
                c.action = LocalAction::noop(i);
            } else {
                const RuleEvaluation& ev = cache.get(i, *region);
                c.rules = ev.candidates;
                c.probs = rule_distribution(ev);
                const std::size_t idx = sample_index(c.probs, rng);
                c.action = LocalAction{i, region, ev.candidates[idx]};
                c.log_prob = ev.log_probs.value().data[idx];
            }
            out[i].push_back(std::move(c));
        }
    }
    return out;
}

inline CandidateSet sample_candidates(const Model& model, const RoutingProblem& problem, const GlobalState& state,
                                      const Offers& offers, int Z, Rng& rng) {
    ad::Tape tape(false);
    Binder b(tape, model.params());
    const StateEncoding enc = encode_state(model, b, problem, state);
    RuleCache cache(model, b, enc);
    return sample_candidates(cache, state, offers, Z, rng);
}

// Slot j of every agent forms global candidate j.
inline std::vector<GlobalAction> assemble_global_candidates(const CandidateSet& candidates) {
    if (candidates.empty()) return {};
    const std::size_t Z = candidates[0].size();
    std::vector<GlobalAction> out(Z);
    for (const auto& per_agent : candidates) {
        if (per_agent.size() != Z) throw ContractError("every agent needs the same number of candidates");
        for (std::size_t j = 0; j < Z; ++j) out[j].locals.push_back(per_agent[j].action);
    }
    return out;
}

// Uniform candidate with probability epsilon, otherwise the first maximum.
inline std::size_t select_action_epsilon_greedy(std::span<const double> scores, double epsilon, Rng& rng) {
    if (scores.empty()) throw ContractError("no candidates to select from");
    if (rng.uniform() < epsilon) return rng.uniform_int(scores.size());
    return argmax_index(scores);
}

// Critic-guided choice among Z zipped candidates (the training-time policy).
inline GlobalAction training_action(const Model& model, const RoutingProblem& problem, const GlobalState& state,
                                    const Offers& offers, const TrainingConfig& cfg, Rng& rng) {
    ad::Tape tape(false);
    Binder b(tape, model.params());
    const StateEncoding enc = encode_state(model, b, problem, state);
    RuleCache cache(model, b, enc);
    const CandidateSet cands = sample_candidates(cache, state, offers, cfg.candidates, rng);
    std::vector<GlobalAction> globals = assemble_global_candidates(cands);
    const ad::Var q = score_global_actions(model, b, enc, cache, globals);
    return globals[select_action_epsilon_greedy(q.value().data, cfg.epsilon, rng)];
}

inline EpisodeTrace training_rollout(const Model& model, const Instance& inst, const TrainingConfig& cfg, Rng& rng) {
    auto provider = [&](const GlobalState& s, const Offers& offers, Rng& r) {
        return training_action(model, inst.problem, s, offers, cfg, r);
    };
    return rollout_episode(inst.problem, inst.initial, provider, cfg.steps, cfg.reward(inst.problem.agents()), rng);
}

// ---------------------------------------------------------------------------
// Scalar loss pieces.

// G_t = sum_{t' >= t} gamma^{t'-t} r_{t'+1}; rewards[t] holds r_{t+1}.
inline std::vector<double> compute_returns(std::span<const double> rewards, double gamma) {
    std::vector<double> g(rewards.size());
    double acc = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    return g;
}

inline double loss_critic(std::span<const double> returns, std::span<const double> q) {
    if (returns.size() != q.size()) throw ShapeError("loss_critic: returns and Q differ in length");
    if (returns.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t t = 0; t < q.size(); ++t) s += (returns[t] - q[t]) * (returns[t] - q[t]);
    return s / static_cast<double>(q.size());
}

// Q of the chosen rule minus the policy-weighted Q over all rules.
inline double advantage(std::span<const double> q_rules, std::span<const double> probs, std::size_t chosen) {
    if (q_rules.size() != probs.size() || chosen >= q_rules.size()) throw ShapeError("advantage: bad inputs");
    double base = 0.0;
    for (std::size_t u = 0; u < probs.size(); ++u) base += probs[u] * q_rules[u];
    return q_rules[chosen] - base;
}

struct PolicyTerm {
    AgentId agent = 0;
    double advantage = 0.0;
    double log_prob = 0.0;
};

// (1/n) sum_i ( - sum_t A log pi ); NoOp steps contribute nothing.
inline double loss_policy(std::span<const std::vector<PolicyTerm>> steps, int agents) {
    double s = 0.0;
    for (const auto& terms : steps) {
        for (const auto& p : terms) s -= p.advantage * p.log_prob;
    }
    return s / static_cast<double>(agents);
}

inline double total_loss(double critic, double policy, double alpha) { return critic + alpha * policy; }

// ---------------------------------------------------------------------------
// Differentiable episode loss.

// Q(s, u, a^{-i}, w) for every candidate rule u of agent i's region: C x 1.
inline ad::Var score_rule_alternatives(const Model& model, Binder& b, const StateEncoding& enc, RuleCache& cache,
                                       const GlobalAction& action, AgentId agent) {
    using namespace ad;
    const LocalAction& la = action.locals.at(agent);
    if (la.is_noop()) throw ContractError("score_rule_alternatives: agent has no region");
    const RuleEvaluation& ev = cache.get(agent, *la.region);
    Var acc = model.agent_blocks_all_rules(b, enc.agents[agent], ev);
    for (const LocalAction& o : action.locals) {
        if (o.agent == agent) continue;
        Var blk;
        if (o.is_noop()) {
            blk = model.agent_block(b, enc.agents[o.agent], nullptr, 0);
        } else {
            const RuleEvaluation& oe = cache.get(o.agent, *o.region);
            blk = model.agent_block(b, enc.agents[o.agent], &oe, oe.index_of(o.rule));
        }
        acc = add(acc, blk);
    }
    acc = scale(acc, 1.0 / static_cast<double>(action.locals.size()));
    return model.score(b, concat_cols({acc, broadcast_rows(enc.pool.mean, acc.rows())}));
}

struct StepTerms {
    double q = 0.0;
    double ret = 0.0;
    std::vector<PolicyTerm> policy;
};

struct EpisodeLoss {
    double critic = 0.0;  // L_a
    double policy = 0.0;  // L_u
    double total = 0.0;
    std::vector<StepTerms> steps;
};

// Loss of one trace under the current parameters. When `grads` is given the
// parameter gradient is added into it. Advantages are constants; pass
// `fixed_advantages[t][j]` (j-th acting agent at step t) to pin them.
inline EpisodeLoss episode_loss(const Model& model, const RoutingProblem& problem, const EpisodeTrace& trace,
                                const TrainingConfig& cfg, std::vector<ad::Array>* grads = nullptr,
                                const std::vector<std::vector<double>>* fixed_advantages = nullptr) {
    using namespace ad;
    EpisodeLoss out;
    const int T = trace.steps();
    if (T == 0) return out;
    const int n = problem.agents();
    const std::vector<double> G = compute_returns(trace.rewards, cfg.gamma);
    for (int t = 0; t < T; ++t) {
        Tape tape(grads != nullptr);
        Binder b(tape, model.params());
        const GlobalState& s = trace.states[t];
        const GlobalAction& a = trace.actions[t];
        const StateEncoding enc = encode_state(model, b, problem, s);
        RuleCache cache(model, b, enc);
        Var q = score_global_action(model, b, enc, cache, a);
        StepTerms st;
        st.q = q.item();
        st.ret = G[t];
        Var diff = add_scalar(scale(q, -1.0), G[t]);
        Var loss = scale(mul(diff, diff), 1.0 / T);
        std::vector<Var> logps;
        for (const LocalAction& la : a.locals) {
            if (la.is_noop()) continue;
            const RuleEvaluation& ev = cache.get(la.agent, *la.region);
            const std::size_t idx = ev.index_of(la.rule);
            PolicyTerm pt;
            pt.agent = la.agent;
            if (fixed_advantages) {
                pt.advantage = fixed_advantages->at(t).at(st.policy.size());
            } else {
                const Var qa = score_rule_alternatives(model, b, enc, cache, a, la.agent);
                pt.advantage = advantage(qa.value().data, rule_distribution(ev), idx);
            }
            Var lp = pick(ev.log_probs, 0, idx);
            pt.log_prob = lp.item();
            logps.push_back(scale(lp, -pt.advantage * cfg.alpha / n));
            st.policy.push_back(pt);
        }
        for (const Var& v : logps) loss = add(loss, v);
        if (!std::isfinite(loss.item())) {
            throw NumericalError("non-finite loss at step " + std::to_string(t));
        }
        if (grads) {
            tape.backward(loss);
            b.accumulate_grads(*grads);
        }
        out.steps.push_back(std::move(st));
    }
    std::vector<double> qs, rs;
    std::vector<std::vector<PolicyTerm>> pol;
    for (const auto& st : out.steps) {
        qs.push_back(st.q);
        rs.push_back(st.ret);
        pol.push_back(st.policy);
    }
    out.critic = loss_critic(rs, qs);
    out.policy = loss_policy(pol, n);
    out.total = total_loss(out.critic, out.policy, cfg.alpha);
    return out;
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochMetrics {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double critic_loss = 0.0;
    double policy_loss = 0.0;
    double mean_reward = 0.0;
    std::optional<double> validation_gap;  // percent vs initial
    long optimizer_step = 0;
};

struct TrainingState {
    ad::OptimizerState optimizer;
    Rng rng;
    int epoch = 0;  // completed epochs

    friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

inline TrainingState init_training(const Model& model, const TrainingConfig& cfg) {
    return TrainingState{ad::OptimizerState::for_params(model.params().values(), cfg.learning_rate), Rng(cfg.seed), 0};
}

// Mean gap vs initial of greedy decentral rollouts; seeds fixed per problem.
inline double validation_gap(const Model& model, std::span<const Instance> val, const TrainingConfig& cfg) {
    double s = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
        Rng rng(derive_seed(cfg.seed ^ 0x7661u, 0, i));
        const GlobalState fin = run_inference(model, val[i].problem, val[i].initial, cfg.validation_steps, rng);
        s += gap(team_average_cost(val[i].problem, val[i].initial), team_average_cost(val[i].problem, fin));
    }
    return s / static_cast<double>(val.size());
}

using EpochCallback = std::function<void(const EpochMetrics&, const Model&, const TrainingState&)>;

inline std::vector<EpochMetrics> train(Model& model, std::span<const Instance> train_set,
                                       std::span<const Instance> val_set, const TrainingConfig& cfg,
                                       TrainingState& st, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    std::vector<EpochMetrics> log;
    ParamStore& params = model.params();
    while (st.epoch < cfg.epochs) {
        EpochMetrics m;
        m.epoch = st.epoch + 1;
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        st.rng.shuffle(order);
        double reward_sum = 0.0;
        long reward_count = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<ad::Array> grads = params.zeros_like();
            for (std::size_t k = start; k < stop; ++k) {
                const Instance& inst = train_set[order[k]];
                const EpisodeTrace trace = training_rollout(model, inst, cfg, st.rng);
                EpisodeLoss el;
                try {
                    el = episode_loss(model, inst.problem, trace, cfg, &grads);
                } catch (const NumericalError& e) {
                    throw NumericalError(std::string(e.what()) + ", epoch " + std::to_string(m.epoch) + ", problem " +
                                         std::to_string(order[k]) + ", optimizer step " +
                                         std::to_string(st.optimizer.step));
                }
                m.train_loss += el.total;
                m.critic_loss += el.critic;
                m.policy_loss += el.policy;
                for (double r : trace.rewards) reward_sum += r;
                reward_count += static_cast<long>(trace.rewards.size());
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& g : grads) {
                for (double& x : g.data) x *= inv;
            }
            ad::clip_gradients(grads, cfg.clip_norm);
            const double lr = ad::lr_at(cfg.learning_rate, st.optimizer.step, cfg.lr_decay, cfg.decay_steps);
            ad::adam_step(params.values(), grads, st.optimizer, lr);
        }
        if (!order.empty()) {
            const double ne = static_cast<double>(order.size());
            m.train_loss /= ne;
            m.critic_loss /= ne;
            m.policy_loss /= ne;
        }
        if (reward_count > 0) m.mean_reward = reward_sum / static_cast<double>(reward_count);
        if (!val_set.empty()) m.validation_gap = validation_gap(model, val_set, cfg);
        m.optimizer_step = st.optimizer.step;
        ++st.epoch;
        log.push_back(m);
        if (on_epoch) on_epoch(m, model, st);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Exhaustive action enumeration and the critic-factorization diagnostic.

// Every legal local action of one agent (NoOp first).
inline std::vector<LocalAction> enumerate_local_actions(const GlobalState& state, AgentId agent,
                                                        std::optional<NodeId> offer, bool include_drop) {
    std::vector<LocalAction> out{LocalAction::noop(agent)};
    std::vector<NodeId> regions;
    if (!state.pool.empty()) {
        if (offer) regions.push_back(*offer);
    } else {
        const auto in = state.routes.at(agent).interior();
        regions.assign(in.begin(), in.end());
    }
    for (NodeId w : regions) {
        for (NodeId u : legal_rules(state, agent, w, state.pool.empty() ? std::nullopt : offer)) {
            if (!include_drop && state.pool.empty() && u == kPoolSentinel) continue;
            out.push_back(LocalAction{agent, w, u});
        }
    }
    return out;
}

inline std::vector<GlobalAction> enumerate_joint_actions(const GlobalState& state, const Offers& offers,
                                                         bool include_drop) {
    std::vector<GlobalAction> out{GlobalAction{}};
    for (AgentId i = 0; i < state.agents(); ++i) {
        const auto locals = enumerate_local_actions(state, i, offers[i], include_drop);
        std::vector<GlobalAction> next;
        for (const auto& g : out) {
            for (const auto& l : locals) {
                GlobalAction h = g;
                h.locals.push_back(l);
                next.push_back(std::move(h));
            }
        }
        out = std::move(next);
    }
    return out;
}

struct FactorizationReport {
    int comparisons = 0;  // (agent, a^{-i}, a~^{-i}) triples checked
    int violations = 0;   // argmax sets differed
};

// Horizon-2 Q^pi under a uniform policy over legal joint actions, for a
// 2-agent instance. Offers at the second step are averaged over `offer_draws`
// pinned coordinator seeds. Reports (does not assert) whether the set of
// maximizing local actions of each agent depends on the other agent's action.
inline FactorizationReport factorization_diagnostic(const RoutingProblem& problem, const GlobalState& s0, double gamma,
                                                    int offer_draws = 8, std::uint64_t seed = 0) {
    if (problem.agents() != 2) throw ContractError("factorization diagnostic expects 2 agents");
    const RewardConfig rc = RewardConfig::for_agents(2);
    const Offers none(2);
    const auto a0 = enumerate_local_actions(s0, 0, std::nullopt, true);
    const auto a1 = enumerate_local_actions(s0, 1, std::nullopt, true);
    std::vector<std::vector<double>> Q(a0.size(), std::vector<double>(a1.size(), 0.0));
    for (std::size_t x = 0; x < a0.size(); ++x) {
        for (std::size_t y = 0; y < a1.size(); ++y) {
            const GlobalAction a{{a0[x], a1[y]}};
            const GlobalState s1 = apply_global_action(s0, a);
            std::vector<GlobalState> prefix{s0, s1};
            const double r1 = compute_reward(prefix, rc, problem);
            double future = 0.0;
            for (int d = 0; d < offer_draws; ++d) {
                PoolCoordinatorState coord;
                update_coordinator(coord, s0, a, s1);
                Offers offers(2);
                Rng rng(derive_seed(seed, static_cast<std::uint64_t>(d)));
                if (!s1.pool.empty()) offers = assign_pool_offers(s1.pool, 2, coord, rng);
                const auto next = enumerate_joint_actions(s1, offers, true);
                double acc = 0.0;
                for (const auto& b : next) {
                    std::vector<GlobalState> p2{s0, s1, apply_global_action(s1, b)};
                    acc += compute_reward(p2, rc, problem);
                }
                future += acc / static_cast<double>(next.size());
            }
            Q[x][y] = r1 + gamma * future / offer_draws;
        }
    }
    auto argmax_set = [](const std::vector<double>& v) {
        const double mx = *std::max_element(v.begin(), v.end());
        std::vector<std::size_t> s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (std::abs(v[i] - mx) <= 1e-12) s.push_back(i);
        }
        return s;
    };
    FactorizationReport rep;
    // Agent 0 against each a^{-0}.
    std::vector<std::vector<std::size_t>> sets0, sets1;
    for (std::size_t y = 0; y < a1.size(); ++y) {
        std::vector<double> col;
        for (std::size_t x = 0; x < a0.size(); ++x) col.push_back(Q[x][y]);
        sets0.push_back(argmax_set(col));
    }
    for (std::size_t x = 0; x < a0.size(); ++x) sets1.push_back(argmax_set(Q[x]));
    for (const auto* sets : {&sets0, &sets1}) {
        for (std::size_t j = 1; j < sets->size(); ++j) {
            ++rep.comparisons;
            if ((*sets)[j] != (*sets)[0]) ++rep.violations;
        }
    }
    return rep;
}

}  // namespace manr
