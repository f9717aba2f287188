#pragma once

// Domain model for the multi-vehicle routing problem: nodes, per-agent
// inverse-velocity costs, routes, the shared pool and global states.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "manr/errors.hpp"

namespace manr {

using NodeId = int;
using AgentId = int;

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

enum class NodeKind { Customer, Depot };

struct Node {
    NodeId id = 0;
    Point pos;
    NodeKind kind = NodeKind::Customer;
    AgentId owner = -1;  // depot owner; -1 for customers
};

// Customers take ids [0, k); the depot of agent i has id k + i.
class RoutingProblem {
public:
    RoutingProblem() = default;

    RoutingProblem(std::vector<Point> customers, std::vector<Point> depots, std::vector<double> velocities)
        : customers_(std::move(customers)), depots_(std::move(depots)), velocities_(std::move(velocities)) {
        if (depots_.empty()) throw InvariantViolation("problem needs at least one agent");
        if (velocities_.size() != depots_.size()) {
            throw InvariantViolation("exactly one velocity per agent required");
        }
        for (double v : velocities_) {
            if (!(v > 0.0)) throw InvariantViolation("velocities must be strictly positive");
        }
        auto in_square = [](const Point& p) { return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0; };
        for (const auto& p : customers_) {
            if (!in_square(p)) throw InvariantViolation("customer outside the unit square");
        }
        for (const auto& p : depots_) {
            if (!in_square(p)) throw InvariantViolation("depot outside the unit square");
        }
    }

    int agents() const { return static_cast<int>(depots_.size()); }
    int customers() const { return static_cast<int>(customers_.size()); }
    int node_count() const { return customers() + agents(); }

    NodeId depot_of(AgentId agent) const {
        check_agent(agent);
        return customers() + agent;
    }

    bool is_customer(NodeId id) const { return id >= 0 && id < customers(); }
    bool is_depot(NodeId id) const { return id >= customers() && id < node_count(); }

    Node node(NodeId id) const {
        if (is_customer(id)) return Node{id, customers_[id], NodeKind::Customer, -1};
        if (is_depot(id)) {
            const AgentId a = id - customers();
            return Node{id, depots_[a], NodeKind::Depot, a};
        }
        throw InvalidReference("unknown node id " + std::to_string(id));
    }

    const Point& position(NodeId id) const {
        if (is_customer(id)) return customers_[id];
        if (is_depot(id)) return depots_[id - customers()];
        throw InvalidReference("unknown node id " + std::to_string(id));
    }

    double velocity(AgentId agent) const {
        check_agent(agent);
        return velocities_[agent];
    }

    const std::vector<Point>& customer_positions() const { return customers_; }
    const std::vector<Point>& depot_positions() const { return depots_; }
    const std::vector<double>& velocities() const { return velocities_; }

    void check_agent(AgentId agent) const {
        if (agent < 0 || agent >= agents()) throw InvalidReference("unknown agent id " + std::to_string(agent));
    }

    friend bool operator==(const RoutingProblem&, const RoutingProblem&) = default;

private:
    std::vector<Point> customers_;
    std::vector<Point> depots_;
    std::vector<double> velocities_;
};

inline double distance(const Point& a, const Point& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

inline double edge_cost(const RoutingProblem& problem, AgentId agent, NodeId v, NodeId z) {
    return distance(problem.position(v), problem.position(z)) / problem.velocity(agent);
}

// Local state of one agent. sequence = [depot, c1, ..., cm, depot].
struct Route {
    AgentId agent = 0;
    std::vector<NodeId> sequence;

    std::span<const NodeId> interior() const {
        if (sequence.size() < 2) return {};
        return std::span<const NodeId>(sequence).subspan(1, sequence.size() - 2);
    }

    std::size_t customer_count() const { return sequence.size() < 2 ? 0 : sequence.size() - 2; }

    bool visits(NodeId id) const {
        auto in = interior();
        return std::find(in.begin(), in.end(), id) != in.end();
    }

    // Index into sequence of a customer, or -1.
    int position_of(NodeId id) const {
        for (std::size_t i = 1; i + 1 < sequence.size(); ++i) {
            if (sequence[i] == id) return static_cast<int>(i);
        }
        return -1;
    }

    friend bool operator==(const Route&, const Route&) = default;
};

inline Route make_route(const RoutingProblem& problem, AgentId agent, std::span<const NodeId> customers) {
    Route r;
    r.agent = agent;
    const NodeId d = problem.depot_of(agent);
    r.sequence.reserve(customers.size() + 2);
    r.sequence.push_back(d);
    r.sequence.insert(r.sequence.end(), customers.begin(), customers.end());
    r.sequence.push_back(d);
    return r;
}

// Set of unvisited customers, kept sorted ascending.
struct PoolState {
    std::vector<NodeId> members;

    bool empty() const { return members.empty(); }
    std::size_t size() const { return members.size(); }
    bool contains(NodeId id) const { return std::binary_search(members.begin(), members.end(), id); }
    void insert(NodeId id) {
        auto it = std::lower_bound(members.begin(), members.end(), id);
        if (it == members.end() || *it != id) members.insert(it, id);
    }
    void erase(NodeId id) {
        auto it = std::lower_bound(members.begin(), members.end(), id);
        if (it != members.end() && *it == id) members.erase(it);
    }

    friend bool operator==(const PoolState&, const PoolState&) = default;
};

struct GlobalState {
    std::vector<Route> routes;
    PoolState pool;

    int agents() const { return static_cast<int>(routes.size()); }
    friend bool operator==(const GlobalState&, const GlobalState&) = default;
};

inline void check_route(const RoutingProblem& problem, const Route& route) {
    problem.check_agent(route.agent);
    const NodeId d = problem.depot_of(route.agent);
    if (route.sequence.size() < 2 || route.sequence.front() != d || route.sequence.back() != d) {
        throw InvariantViolation("route of agent " + std::to_string(route.agent) +
                                 " must start and end at its depot " + std::to_string(d));
    }
    std::vector<char> seen(static_cast<std::size_t>(problem.customers()), 0);
    for (NodeId id : route.interior()) {
        if (!problem.is_customer(id)) {
            throw InvariantViolation("route of agent " + std::to_string(route.agent) +
                                     " has non-customer interior node " + std::to_string(id));
        }
        if (seen[id]++) {
            throw InvariantViolation("route of agent " + std::to_string(route.agent) + " visits node " +
                                     std::to_string(id) + " twice");
        }
    }
}

inline double route_cost(const RoutingProblem& problem, AgentId agent, const Route& route) {
    if (route.agent != agent) throw InvariantViolation("route belongs to a different agent");
    check_route(problem, route);
    double total = 0.0;
    for (std::size_t i = 1; i < route.sequence.size(); ++i) {
        total += edge_cost(problem, agent, route.sequence[i - 1], route.sequence[i]);
    }
    return total;
}

inline double team_average_cost(const RoutingProblem& problem, const GlobalState& state) {
    if (state.agents() != problem.agents()) throw InvariantViolation("one route per agent required");
    double total = 0.0;
    for (AgentId i = 0; i < state.agents(); ++i) total += route_cost(problem, i, state.routes[i]);
    return total / static_cast<double>(problem.agents());
}

inline bool is_feasible(const RoutingProblem&, const GlobalState& state) { return state.pool.empty(); }

enum class ViolationKind {
    MissingRoute,
    BadEndpoints,
    UnknownNode,
    DepotInterior,
    DepotInPool,
    DuplicateNode,
    UnassignedNode,
};

struct Violation {
    ViolationKind kind;
    NodeId node = -1;  // offending node, or the route's agent for route-level violations
    std::string message;
};

// Reports every broken GlobalState invariant instead of throwing.
inline std::vector<Violation> validate_state(const RoutingProblem& problem, const GlobalState& state) {
    std::vector<Violation> out;
    const int k = problem.customers();
    std::vector<int> count(static_cast<std::size_t>(k), 0);

    if (state.agents() != problem.agents()) {
        out.push_back({ViolationKind::MissingRoute, -1,
                       "expected " + std::to_string(problem.agents()) + " routes, got " +
                           std::to_string(state.agents())});
    }
    for (std::size_t r = 0; r < state.routes.size(); ++r) {
        const Route& route = state.routes[r];
        const AgentId agent = static_cast<AgentId>(r);
        if (route.agent != agent || agent >= problem.agents()) {
            out.push_back({ViolationKind::MissingRoute, agent, "route slot " + std::to_string(r) + " mislabeled"});
            continue;
        }
        const NodeId d = problem.depot_of(agent);
        if (route.sequence.size() < 2 || route.sequence.front() != d || route.sequence.back() != d) {
            out.push_back({ViolationKind::BadEndpoints, d, "route must start and end at depot " + std::to_string(d)});
        }
        for (NodeId id : route.interior()) {
            if (problem.is_customer(id)) {
                ++count[id];
            } else if (problem.is_depot(id)) {
                out.push_back({ViolationKind::DepotInterior, id, "depot inside a route"});
            } else {
                out.push_back({ViolationKind::UnknownNode, id, "unknown node in route"});
            }
        }
    }
    for (NodeId id : state.pool.members) {
        if (problem.is_customer(id)) {
            ++count[id];
        } else if (problem.is_depot(id)) {
            out.push_back({ViolationKind::DepotInPool, id, "depot in pool"});
        } else {
            out.push_back({ViolationKind::UnknownNode, id, "unknown node in pool"});
        }
    }
    for (NodeId id = 0; id < k; ++id) {
        if (count[id] > 1) {
            out.push_back({ViolationKind::DuplicateNode, id, "node " + std::to_string(id) + " appears " +
                                                                 std::to_string(count[id]) + " times"});
        } else if (count[id] == 0) {
            out.push_back({ViolationKind::UnassignedNode, id, "node " + std::to_string(id) + " is unassigned"});
        }
    }
    return out;
}

// Customer -> agent map read off the routes of a feasible state.
using Assignment = std::vector<AgentId>;

inline Assignment assignment_of(const RoutingProblem& problem, const GlobalState& state) {
    Assignment a(static_cast<std::size_t>(problem.customers()), -1);
    for (const Route& r : state.routes) {
        for (NodeId id : r.interior()) a[id] = r.agent;
    }
    for (AgentId x : a) {
        if (x < 0) throw InvariantViolation("assignment requires a feasible state");
    }
    return a;
}

}  // namespace manr
