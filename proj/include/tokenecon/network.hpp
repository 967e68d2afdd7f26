#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tokenecon/model.hpp"

namespace tokenecon {

class ParseError : public ModelError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : ModelError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct Edge {
    std::size_t id = 0;
    int tail = 0;
    int head = 0;
    double free_flow = 0.0;
    double capacity = 1.0;
    double b = 0.15;
    double power = 4.0;
};

struct Network {
    int node_count = 0;  // nodes are 1..node_count
    std::vector<Edge> edges;  // position == resource id
};

struct OdPair {
    int class_id = 0;
    int origin = 0;
    int dest = 0;
    double mass = 0.0;
};

namespace detail {

inline std::string strip_line(std::string line) {
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::replace(line.begin(), line.end(), ';', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    return line;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

template <class T>
T parse_number(const std::string& tok, const std::string& src, std::size_t line) {
    std::istringstream is(tok);
    T v{};
    is >> v;
    if (is.fail() || !is.eof()) throw ParseError(src, line, "not a number: '" + tok + "'");
    return v;
}

}  // namespace detail

// Edge list, one edge per line: `tail head free_flow_time capacity b power`, optionally
// prefixed by an explicit integer edge id. `#` starts a comment, `~` lines are skipped and
// TNTP metadata tags are accepted; `<NUMBER OF NODES> n` bounds the node ids.
inline Network parse_network(std::istream& in, const std::string& source = "<network>") {
    Network net;
    int declared_nodes = -1;
    std::set<std::size_t> seen_ids;
    std::vector<std::pair<Edge, std::size_t>> pending;  // edge, line
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto first = raw.find_first_not_of(" \t\r");
        if (first == std::string::npos || raw[first] == '~') continue;
        if (raw[first] == '<') {
            auto close = raw.find('>', first);
            if (close == std::string::npos) throw ParseError(source, lineno, "unterminated metadata tag");
            std::string tag = raw.substr(first, close - first + 1);
            if (tag == "<NUMBER OF NODES>") {
                auto toks = detail::split_ws(detail::strip_line(raw.substr(close + 1)));
                if (toks.size() != 1) throw ParseError(source, lineno, "bad node count");
                declared_nodes = detail::parse_number<int>(toks[0], source, lineno);
            }
            continue;
        }
        auto toks = detail::split_ws(detail::strip_line(raw));
        if (toks.empty()) continue;
        if (toks.size() != 6 && toks.size() != 7)
            throw ParseError(source, lineno,
                             "expected 6 fields (tail head free_flow_time capacity b power), got " +
                                 std::to_string(toks.size()));
        std::size_t off = toks.size() == 7 ? 1 : 0;
        Edge e;
        e.id = off ? detail::parse_number<std::size_t>(toks[0], source, lineno) : pending.size();
        e.tail = detail::parse_number<int>(toks[off + 0], source, lineno);
        e.head = detail::parse_number<int>(toks[off + 1], source, lineno);
        e.free_flow = detail::parse_number<double>(toks[off + 2], source, lineno);
        e.capacity = detail::parse_number<double>(toks[off + 3], source, lineno);
        e.b = detail::parse_number<double>(toks[off + 4], source, lineno);
        e.power = detail::parse_number<double>(toks[off + 5], source, lineno);
        if (e.tail < 1 || e.head < 1) throw ParseError(source, lineno, "node ids start at 1");
        if (e.tail == e.head) throw ParseError(source, lineno, "self loop");
        if (!seen_ids.insert(e.id).second)
            throw ModelError(source + ":" + std::to_string(lineno) + ": duplicate edge id " +
                             std::to_string(e.id));
        pending.emplace_back(e, lineno);
    }
    int max_node = 0;
    for (const auto& [e, ln] : pending) max_node = std::max({max_node, e.tail, e.head});
    net.node_count = declared_nodes >= 0 ? declared_nodes : max_node;
    for (auto& [e, ln] : pending) {
        if (e.tail > net.node_count || e.head > net.node_count)
            throw ParseError(source, ln, "edge references unknown node");
        net.edges.push_back(e);
    }
    // explicit ids give the resource order; implicit ids already follow file order
    std::stable_sort(net.edges.begin(), net.edges.end(),
                     [](const Edge& a, const Edge& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < net.edges.size(); ++i) net.edges[i].id = i;
    return net;
}

inline Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open network file " + path.string());
    return parse_network(in, path.string());
}

// `class_id origin dest mass` per line
inline std::vector<OdPair> parse_od(std::istream& in, const std::string& source = "<od>") {
    std::vector<OdPair> out;
    std::string raw;
    std::size_t lineno = 0;
    std::set<int> ids;
    while (std::getline(in, raw)) {
        ++lineno;
        auto toks = detail::split_ws(detail::strip_line(raw));
        if (toks.empty()) continue;
        if (toks.size() != 4) throw ParseError(source, lineno, "expected `class_id origin dest mass`");
        OdPair od;
        od.class_id = detail::parse_number<int>(toks[0], source, lineno);
        od.origin = detail::parse_number<int>(toks[1], source, lineno);
        od.dest = detail::parse_number<int>(toks[2], source, lineno);
        od.mass = detail::parse_number<double>(toks[3], source, lineno);
        if (!(od.mass > 0.0)) throw ParseError(source, lineno, "mass must be positive");
        if (!ids.insert(od.class_id).second) throw ParseError(source, lineno, "duplicate class id");
        out.push_back(od);
    }
    std::sort(out.begin(), out.end(),
              [](const OdPair& a, const OdPair& b) { return a.class_id < b.class_id; });
    return out;
}

inline std::vector<OdPair> load_od(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open OD file " + path.string());
    return parse_od(in, path.string());
}

struct PathSet {
    std::vector<std::vector<std::size_t>> paths;  // edge ids in travel order
    std::vector<double> costs;
    bool truncated = false;  // more simple paths exist beyond the cap
};

namespace detail {

struct PathCand {
    double cost;
    std::vector<std::size_t> edges;
    bool operator<(const PathCand& o) const {
        if (cost != o.cost) return cost < o.cost;
        return edges < o.edges;
    }
};

// Dijkstra from `src` avoiding banned nodes/edges. Edges are scanned in id order.
inline bool shortest_path(const Network& net, const std::vector<std::vector<std::size_t>>& out_edges,
                          int src, int dst, const std::vector<char>& banned_node,
                          const std::vector<char>& banned_edge, const std::vector<double>& cost,
                          std::vector<std::size_t>& path, double& total) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(net.node_count + 1, inf);
    std::vector<long> pred(net.node_count + 1, -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[src] = 0.0;
    pq.push({0.0, src});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        if (u == dst) break;
        for (std::size_t e : out_edges[u]) {
            if (banned_edge[e]) continue;
            int v = net.edges[e].head;
            if (banned_node[v]) continue;
            double nd = d + cost[e];
            if (nd < dist[v]) {
                dist[v] = nd;
                pred[v] = static_cast<long>(e);
                pq.push({nd, v});
            }
        }
    }
    if (dist[dst] == inf) return false;
    path.clear();
    for (int v = dst; v != src;) {
        auto e = static_cast<std::size_t>(pred[v]);
        path.push_back(e);
        v = net.edges[e].tail;
    }
    std::reverse(path.begin(), path.end());
    total = dist[dst];
    return true;
}

}  // namespace detail

// Yen's K shortest simple paths, edge cost = free-flow time. Deterministic: candidates are
// ordered by (cost, edge id sequence).
inline PathSet k_shortest_paths(const Network& net, int origin, int dest, std::size_t K) {
    if (origin < 1 || origin > net.node_count || dest < 1 || dest > net.node_count)
        throw ModelError("OD node out of range");
    if (origin == dest) throw ModelError("origin equals destination");
    std::vector<std::vector<std::size_t>> out_edges(net.node_count + 1);
    std::vector<double> cost(net.edges.size());
    for (const auto& e : net.edges) {
        out_edges[e.tail].push_back(e.id);
        cost[e.id] = e.free_flow;
    }
    for (auto& v : out_edges) std::sort(v.begin(), v.end());

    auto path_cost = [&](const std::vector<std::size_t>& p) {
        double c = 0.0;
        for (auto e : p) c += cost[e];
        return c;
    };

    PathSet res;
    std::vector<char> banned_node(net.node_count + 1, 0), banned_edge(net.edges.size(), 0);
    std::vector<std::size_t> first;
    double c0 = 0.0;
    if (!detail::shortest_path(net, out_edges, origin, dest, banned_node, banned_edge, cost, first, c0))
        throw ModelError("destination " + std::to_string(dest) + " unreachable from origin " +
                         std::to_string(origin));
    std::vector<std::vector<std::size_t>> A{first};
    std::set<detail::PathCand> B;
    std::set<std::vector<std::size_t>> known{first};

    // generate one more than K so truncation can be reported
    while (A.size() < K + 1) {
        const auto& last = A.back();
        for (std::size_t i = 0; i < last.size(); ++i) {
            int spur = net.edges[last[i]].tail;
            std::vector<std::size_t> root(last.begin(), last.begin() + static_cast<long>(i));
            std::fill(banned_node.begin(), banned_node.end(), 0);
            std::fill(banned_edge.begin(), banned_edge.end(), 0);
            for (const auto& p : A)
                if (p.size() > i && std::equal(root.begin(), root.end(), p.begin())) banned_edge[p[i]] = 1;
            for (auto e : root) banned_node[net.edges[e].tail] = 1;
            std::vector<std::size_t> tail_path;
            double tc = 0.0;
            if (!detail::shortest_path(net, out_edges, spur, dest, banned_node, banned_edge, cost,
                                       tail_path, tc))
                continue;
            std::vector<std::size_t> full = root;
            full.insert(full.end(), tail_path.begin(), tail_path.end());
            if (known.insert(full).second) B.insert({path_cost(full), full});
        }
        if (B.empty()) break;
        A.push_back(B.begin()->edges);
        B.erase(B.begin());
    }
    if (A.size() > K) {
        res.truncated = true;
        A.resize(K);
    }
    res.paths = A;
    for (const auto& p : A) res.costs.push_back(path_cost(p));
    return res;
}

struct NetworkGameOptions {
    std::size_t max_paths = 3;
    double flow_scale = 1.0;  // physical flow units per unit normalized flow
    double eps_rel = 1e-3;
};

struct NetworkGame {
    Scenario scenario;
    std::vector<std::string> warnings;
};

// Resources are edges with negated-BPR rewards, classes are OD pairs, actions are paths.
inline NetworkGame build_network_game(const Network& net, const std::vector<OdPair>& ods,
                                      const NetworkGameOptions& opt) {
    NetworkGame g;
    for (const auto& e : net.edges)
        g.scenario.rewards.push_back(
            RewardFn::negated_bpr(e.free_flow, e.capacity, e.b, e.power, opt.flow_scale, opt.eps_rel));
    for (const auto& od : ods) {
        ClassSpec cls;
        cls.name = std::to_string(od.origin) + "-" + std::to_string(od.dest);
        cls.mass = od.mass;
        cls.origin = od.origin;
        cls.dest = od.dest;
        auto ps = k_shortest_paths(net, od.origin, od.dest, opt.max_paths);
        if (ps.truncated)
            g.warnings.push_back("class " + cls.name + ": path cap K=" + std::to_string(opt.max_paths) +
                                 " binds, more simple paths exist");
        for (const auto& p : ps.paths) {
            Action a;
            a.resources = p;
            std::ostringstream lbl;
            lbl << net.edges[p.front()].tail;
            for (auto e : p) lbl << '>' << net.edges[e].head;
            a.label = lbl.str();
            std::sort(a.resources.begin(), a.resources.end());
            cls.actions.push_back(std::move(a));
        }
        g.scenario.classes.push_back(std::move(cls));
    }
    return g;
}

}  // namespace tokenecon
