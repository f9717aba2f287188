#pragma once

// Scalar re-derivations of the training loss, built only from value-level
// model queries, for comparison with the taped implementation.

#include <cmath>
#include <vector>

#include "helpers.hpp"

namespace manr::testing {

struct LossOracle {
    double critic = 0.0;
    double policy = 0.0;
    double total = 0.0;
    std::vector<std::vector<double>> advantages;
    std::vector<std::vector<double>> log_probs;
};

// Rule distribution of one agent's region in `s`, evaluated from scratch.
inline std::vector<double> oracle_rule_probs(const Model& m, const RoutingProblem& p, const GlobalState& s, AgentId i,
                                             NodeId region, std::vector<NodeId>* cands) {
    ad::Tape tape(false);
    Binder b(tape, m.params());
    const auto obs = observe_local(p, s, i);
    const auto pool = observe_pool(p, s);
    const auto ev = m.evaluate_rules(b, obs, m.encode_local_state(b, obs), pool, m.encode_pool(b, pool), region);
    if (cands) *cands = ev.candidates;
    std::vector<double> z = ev.logits.value().data;
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double den = 0.0;
    for (double& v : z) den += (v = std::exp(v - mx));
    for (double& v : z) v /= den;
    return z;
}

inline LossOracle oracle_episode_loss(const Model& m, const RoutingProblem& p, const EpisodeTrace& tr, double gamma,
                                      double alpha) {
    LossOracle o;
    const int T = tr.steps();
    const int n = p.agents();
    for (int t = 0; t < T; ++t) {
        double g = 0.0, disc = 1.0;
        for (int k = t; k < T; ++k, disc *= gamma) g += disc * tr.rewards[k];
        const GlobalState& s = tr.states[t];
        const GlobalAction& a = tr.actions[t];
        const double q = score_global_action(m, p, s, a);
        o.critic += (g - q) * (g - q) / T;
        std::vector<double> adv, lps;
        for (const LocalAction& la : a.locals) {
            if (la.is_noop()) continue;
            std::vector<NodeId> cands;
            const auto pi = oracle_rule_probs(m, p, s, la.agent, *la.region, &cands);
            double base = 0.0, chosen_q = 0.0, chosen_pi = 0.0;
            for (std::size_t u = 0; u < cands.size(); ++u) {
                GlobalAction alt = a;
                alt.locals[la.agent].rule = cands[u];
                const double qu = score_global_action(m, p, s, alt);
                base += pi[u] * qu;
                if (cands[u] == la.rule) {
                    chosen_q = qu;
                    chosen_pi = pi[u];
                }
            }
            adv.push_back(chosen_q - base);
            lps.push_back(std::log(chosen_pi));
            o.policy -= adv.back() * lps.back() / n;
        }
        o.advantages.push_back(adv);
        o.log_probs.push_back(lps);
    }
    o.total = o.critic + alpha * o.policy;
    return o;
}

// Four customers, two agents. Step 0: agent 0 reorders, agent 1 drops
// customer 2. Step 1: agent 0 integrates it, agent 1 idles.
inline std::pair<RoutingProblem, EpisodeTrace> two_step_trace() {
    RoutingProblem p = make_problem({{0.2, 0.1}, {0.3, 0.5}, {0.8, 0.7}, {0.6, 0.9}}, {{0.1, 0.2}, {0.9, 0.8}},
                                    {1.0, 0.97});
    EpisodeTrace tr;
    tr.states.push_back(make_state(p, {{0, 1}, {2, 3}}));
    tr.offers.push_back(Offers(2));
    tr.actions.push_back(GlobalAction{{LocalAction{0, 0, 1}, LocalAction{1, 2, kPoolSentinel}}});
    tr.states.push_back(apply_global_action(tr.states[0], tr.actions[0]));
    Offers o(2);
    o[0] = 2;
    tr.offers.push_back(o);
    tr.actions.push_back(GlobalAction{{LocalAction{0, 2, 0}, LocalAction::noop(1)}});
    tr.states.push_back(apply_global_action(tr.states[1], tr.actions[1]));
    const RewardConfig rc = RewardConfig::for_agents(2);
    for (int t = 1; t <= 2; ++t) {
        tr.rewards.push_back(compute_reward(std::span<const GlobalState>(tr.states.data(), t + 1), rc, p));
        tr.prev_feasible.push_back(previous_feasible(p, tr.states, t));
    }
    for (const auto& s : tr.states) tr.feasible.push_back(is_feasible(p, s));
    return {p, tr};
}

}  // namespace manr::testing
