#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace odflow {

/// Directed link with BPR volume-delay parameters.
struct Link {
  int id = 0;
  int from = 0;
  int to = 0;
  double tau0 = 1.0;   // free-flow travel time
  double zmax = 1.0;   // capacity per period (soft, not a hard constraint)
  double alpha = 0.15;
  double beta = 4.0;
};

struct OdPair {
  int origin = 0;
  int destination = 0;

  friend bool operator==(const OdPair& a, const OdPair& b) {
    return a.origin == b.origin && a.destination == b.destination;
  }
  friend bool operator<(const OdPair& a, const OdPair& b) {
    return std::pair(a.origin, a.destination) <
           std::pair(b.origin, b.destination);
  }
};

/// Immutable directed network: node ids, ordered link list, ordered OD pairs.
/// Construction validates the structural invariants and builds the id lookup.
class Network {
 public:
  Network(std::vector<int> nodes, std::vector<Link> links,
          std::vector<OdPair> od_pairs)
      : nodes_(std::move(nodes)),
        links_(std::move(links)),
        od_pairs_(std::move(od_pairs)) {
    std::set<int> node_set(nodes_.begin(), nodes_.end());
    if (node_set.size() != nodes_.size()) {
      throw std::invalid_argument("Network: duplicate node ids");
    }
    for (const Link& link : links_) {
      if (link.tau0 <= 0.0 || link.zmax <= 0.0 || link.alpha < 0.0 ||
          link.beta < 0.0) {
        throw std::invalid_argument("Network: invalid BPR parameters on link " +
                                    std::to_string(link.id));
      }
      if (link.from == link.to) {
        throw std::invalid_argument("Network: self-loop on link " +
                                    std::to_string(link.id));
      }
      if (!node_set.count(link.from) || !node_set.count(link.to)) {
        throw std::invalid_argument("Network: link " + std::to_string(link.id) +
                                    " references unknown node");
      }
      if (!id_to_index_.emplace(link.id, id_to_index_.size()).second) {
        throw std::invalid_argument("Network: duplicate link id " +
                                    std::to_string(link.id));
      }
    }
    std::set<OdPair> pair_set(od_pairs_.begin(), od_pairs_.end());
    if (pair_set.size() != od_pairs_.size()) {
      throw std::invalid_argument("Network: duplicate OD pairs");
    }
    for (const OdPair& od : od_pairs_) {
      if (!node_set.count(od.origin) || !node_set.count(od.destination)) {
        throw std::invalid_argument("Network: OD pair references unknown node");
      }
    }
  }

  const std::vector<int>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<OdPair>& od_pairs() const { return od_pairs_; }
  int num_links() const { return static_cast<int>(links_.size()); }
  int num_od_pairs() const { return static_cast<int>(od_pairs_.size()); }

  bool has_link(int id) const { return id_to_index_.count(id) > 0; }

  int link_index(int id) const {
    auto it = id_to_index_.find(id);
    if (it == id_to_index_.end()) {
      throw std::invalid_argument("Network: unknown link id " +
                                  std::to_string(id));
    }
    return static_cast<int>(it->second);
  }

  const Link& link_by_id(int id) const { return links_[link_index(id)]; }

 private:
  std::vector<int> nodes_;
  std::vector<Link> links_;
  std::vector<OdPair> od_pairs_;
  std::map<int, std::size_t> id_to_index_;
};

/// Enumerated routes per OD pair. Each route is a loop-free link-id sequence;
/// within a pair the routes are ordered lexicographically by that sequence,
/// and the global route index runs over pairs in OD-pair order.
class RouteSet {
 public:
  explicit RouteSet(std::vector<std::vector<std::vector<int>>> per_pair)
      : per_pair_(std::move(per_pair)) {
    offsets_.reserve(per_pair_.size() + 1);
    offsets_.push_back(0);
    for (const auto& routes : per_pair_) {
      offsets_.push_back(offsets_.back() + static_cast<int>(routes.size()));
    }
  }

  int num_pairs() const { return static_cast<int>(per_pair_.size()); }
  int num_routes(int pair) const {
    return static_cast<int>(per_pair_.at(pair).size());
  }
  int total_routes() const { return offsets_.back(); }
  int pair_offset(int pair) const { return offsets_.at(pair); }
  int global_index(int pair, int k) const { return offsets_.at(pair) + k; }

  const std::vector<int>& route(int pair, int k) const {
    return per_pair_.at(pair).at(k);
  }

  const std::vector<int>& route_global(int k) const {
    const int pair = pair_of_route(k);
    return per_pair_[pair][k - offsets_[pair]];
  }

  int pair_of_route(int k) const {
    if (k < 0 || k >= total_routes()) {
      throw std::out_of_range("RouteSet: route index out of range");
    }
    int pair = 0;
    while (offsets_[pair + 1] <= k) ++pair;
    return pair;
  }

 private:
  std::vector<std::vector<std::vector<int>>> per_pair_;
  std::vector<int> offsets_;
};

/// All simple directed paths per OD pair, found by depth-first search with
/// out-links visited in ascending link-id order, which yields the
/// lexicographic route order directly. Throws if any OD pair has no route.
inline RouteSet enumerate_routes(const Network& network) {
  std::map<int, std::vector<int>> out_links;  // node -> link indices
  for (int i = 0; i < network.num_links(); ++i) {
    out_links[network.links()[i].from].push_back(i);
  }
  for (auto& [node, idxs] : out_links) {
    std::sort(idxs.begin(), idxs.end(), [&](int a, int b) {
      return network.links()[a].id < network.links()[b].id;
    });
  }

  std::vector<std::vector<std::vector<int>>> per_pair;
  per_pair.reserve(network.od_pairs().size());
  for (const OdPair& od : network.od_pairs()) {
    std::vector<std::vector<int>> routes;
    std::vector<int> stack;
    std::set<int> visited{od.origin};

    auto dfs = [&](auto&& self, int node) -> void {
      if (node == od.destination) {
        std::vector<int> route;
        route.reserve(stack.size());
        for (int idx : stack) route.push_back(network.links()[idx].id);
        routes.push_back(std::move(route));
        return;
      }
      auto it = out_links.find(node);
      if (it == out_links.end()) return;
      for (int idx : it->second) {
        const int next = network.links()[idx].to;
        if (visited.count(next)) continue;  // simple paths only
        visited.insert(next);
        stack.push_back(idx);
        self(self, next);
        stack.pop_back();
        visited.erase(next);
      }
    };
    dfs(dfs, od.origin);

    if (routes.empty()) {
      throw std::runtime_error("enumerate_routes: no route for OD pair (" +
                               std::to_string(od.origin) + ", " +
                               std::to_string(od.destination) + ")");
    }
    per_pair.push_back(std::move(routes));
  }
  return RouteSet(std::move(per_pair));
}

/// Dense 0/1 link-route incidence: one row per link in network order, one
/// column per route in global order, plus the row selection for an observed
/// link subset (rows in ascending link-id order).
class IncidenceMatrix {
 public:
  IncidenceMatrix(Eigen::MatrixXd full, Eigen::MatrixXd selected,
                  std::vector<int> observed_links)
      : full_(std::move(full)),
        selected_(std::move(selected)),
        observed_links_(std::move(observed_links)) {}

  const Eigen::MatrixXd& full() const { return full_; }
  const Eigen::MatrixXd& selected() const { return selected_; }
  const std::vector<int>& observed_links() const { return observed_links_; }
  int num_observed() const { return static_cast<int>(observed_links_.size()); }

 private:
  Eigen::MatrixXd full_;
  Eigen::MatrixXd selected_;
  std::vector<int> observed_links_;
};

inline IncidenceMatrix incidence_matrix(const RouteSet& routes,
                                        const Network& network,
                                        std::vector<int> observed_links) {
  const int num_links = network.num_links();
  const int num_routes = routes.total_routes();
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(num_links, num_routes);
  for (int k = 0; k < num_routes; ++k) {
    for (int link_id : routes.route_global(k)) {
      full(network.link_index(link_id), k) = 1.0;
    }
  }

  std::sort(observed_links.begin(), observed_links.end());
  if (std::adjacent_find(observed_links.begin(), observed_links.end()) !=
      observed_links.end()) {
    throw std::invalid_argument("incidence_matrix: duplicate observed link");
  }
  Eigen::MatrixXd selected(observed_links.size(), num_routes);
  for (std::size_t r = 0; r < observed_links.size(); ++r) {
    selected.row(static_cast<Eigen::Index>(r)) =
        full.row(network.link_index(observed_links[r]));
  }
  return IncidenceMatrix(std::move(full), std::move(selected),
                         std::move(observed_links));
}

/// BPR travel time tau0 * (1 + alpha (z / zmax)^beta). Volumes above
/// capacity are legal; negative volumes are a caller error.
inline double bpr_cost(const Link& link, double volume) {
  if (volume < 0.0) {
    throw std::invalid_argument("bpr_cost: negative volume on link " +
                                std::to_string(link.id));
  }
  return link.tau0 *
         (1.0 + link.alpha * std::pow(volume / link.zmax, link.beta));
}

/// Per-link BPR costs for a full link-volume vector (network link order).
inline Eigen::VectorXd link_costs(const Network& network,
                                  const Eigen::VectorXd& link_volumes) {
  if (link_volumes.size() != network.num_links()) {
    throw std::invalid_argument("link_costs: volume vector length mismatch");
  }
  Eigen::VectorXd costs(network.num_links());
  for (int i = 0; i < network.num_links(); ++i) {
    costs(i) = bpr_cost(network.links()[i], link_volumes(i));
  }
  return costs;
}

/// Route costs c = Delta^T g(z): each route cost is the sum of the BPR costs
/// of its links at the given volumes.
inline Eigen::VectorXd route_costs(const Network& network,
                                   const RouteSet& routes,
                                   const Eigen::VectorXd& link_volumes) {
  const Eigen::VectorXd per_link = link_costs(network, link_volumes);
  Eigen::VectorXd costs(routes.total_routes());
  for (int k = 0; k < routes.total_routes(); ++k) {
    double acc = 0.0;
    for (int link_id : routes.route_global(k)) {
      acc += per_link(network.link_index(link_id));
    }
    costs(k) = acc;
  }
  return costs;
}

/// Mean congestion level per link: CL_i = sum_t z_it / (T zmax_i).
/// `volumes` has one row per period, one column per link in network order.
inline Eigen::VectorXd congestion_levels(const Eigen::MatrixXd& volumes,
                                         const Network& network) {
  if (volumes.cols() != network.num_links() || volumes.rows() < 1) {
    throw std::invalid_argument("congestion_levels: bad volume matrix shape");
  }
  const double periods = static_cast<double>(volumes.rows());
  Eigen::VectorXd cl(network.num_links());
  for (int i = 0; i < network.num_links(); ++i) {
    cl(i) = volumes.col(i).sum() / (periods * network.links()[i].zmax);
  }
  return cl;
}

struct NetworkBundle {
  Network network;
  RouteSet routes;
};

/// Built-in 8-node / 10-link test network with two origins (1, 2) and two
/// destinations (7, 8). Traffic from each origin funnels through node 3 and
/// splits over the central links 2 and 9 before fanning out to the
/// destinations; exhaustive enumeration yields 3 routes per OD pair. All
/// links share tau0 = 1, zmax = 130, alpha = 0.15, beta = 4.
inline NetworkBundle canonical_network() {
  std::vector<int> nodes{1, 2, 3, 4, 5, 6, 7, 8};
  auto mk = [](int id, int from, int to) {
    return Link{id, from, to, 1.0, 130.0, 0.15, 4.0};
  };
  std::vector<Link> links{mk(1, 1, 3), mk(2, 3, 4), mk(3, 4, 7), mk(4, 6, 7),
                          mk(5, 4, 6), mk(6, 5, 6), mk(7, 6, 8), mk(8, 5, 8),
                          mk(9, 3, 5), mk(10, 2, 3)};
  std::vector<OdPair> od_pairs{{1, 7}, {1, 8}, {2, 7}, {2, 8}};
  Network network(std::move(nodes), std::move(links), std::move(od_pairs));
  RouteSet routes = enumerate_routes(network);
  return NetworkBundle{std::move(network), std::move(routes)};
}

/// Network plus enumerated routes plus incidence with an observed-link
/// selection: the bundle every estimator-facing operation consumes.
struct RoutedNetwork {
  Network network;
  RouteSet routes;
  IncidenceMatrix incidence;
};

inline RoutedNetwork build_routed_network(const Network& network,
                                          std::vector<int> observed_links) {
  RouteSet routes = enumerate_routes(network);
  IncidenceMatrix inc =
      incidence_matrix(routes, network, std::move(observed_links));
  return RoutedNetwork{network, std::move(routes), std::move(inc)};
}

inline RoutedNetwork build_routed_network(const NetworkBundle& bundle,
                                          std::vector<int> observed_links) {
  IncidenceMatrix inc = incidence_matrix(bundle.routes, bundle.network,
                                         std::move(observed_links));
  return RoutedNetwork{bundle.network, bundle.routes, std::move(inc)};
}

/// Convenience: ascending ids of every link in the network.
inline std::vector<int> all_link_ids(const Network& network) {
  std::vector<int> ids;
  ids.reserve(network.links().size());
  for (const Link& link : network.links()) ids.push_back(link.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace odflow
