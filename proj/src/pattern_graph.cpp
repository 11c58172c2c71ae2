#include "failure_scout/pattern_graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "failure_scout/errors.hpp"

namespace failure_scout {

MutualKnnGraph::MutualKnnGraph(std::size_t k_nn, std::vector<std::vector<SampleId>> adjacency)
    : k_nn_(k_nn), adjacency_(std::move(adjacency)) {
  for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
}

bool MutualKnnGraph::has_edge(SampleId i, SampleId j) const {
  const auto& nbrs = adjacency_.at(i);
  return std::binary_search(nbrs.begin(), nbrs.end(), j);
}

std::size_t MutualKnnGraph::edge_count() const noexcept {
  std::size_t degree_sum = 0;
  for (const auto& nbrs : adjacency_) degree_sum += nbrs.size();
  return degree_sum / 2;
}

MutualKnnGraph build_mutual_knn(const Eigen::MatrixXd& points, std::size_t k_nn) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k_nn >= n && n > 0)
    throw ParameterError("k_nn = " + std::to_string(k_nn) + " must be smaller than n = " + std::to_string(n));

  std::vector<std::vector<SampleId>> knn(n);
  std::vector<SampleId> order(n);
  for (std::size_t i = 0; i < n && k_nn > 0; ++i) {
    const Eigen::VectorXd dist =
        (points.rowwise() - points.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), SampleId{0});
    std::swap(order[i], order[n - 1]);  // exclude self
    auto closer = [&](SampleId a, SampleId b) {
      const double da = dist(static_cast<Eigen::Index>(a));
      const double db = dist(static_cast<Eigen::Index>(b));
      return da < db || (da == db && a < b);
    };
    auto last = order.begin() + static_cast<std::ptrdiff_t>(n - 1);
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_nn - 1), last, closer);
    knn[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_nn));
    std::sort(knn[i].begin(), knn[i].end());
  }

  std::vector<std::vector<SampleId>> adjacency(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (SampleId j : knn[i]) {
      if (j > i && std::binary_search(knn[j].begin(), knn[j].end(), i)) {
        adjacency[i].push_back(j);
        adjacency[j].push_back(i);
      }
    }
  }
  return MutualKnnGraph(k_nn, std::move(adjacency));
}

MutualKnnGraph build_mutual_knn(const Dataset& ds, std::size_t k_nn) { return build_mutual_knn(ds.embeddings(), k_nn); }

std::vector<std::vector<SampleId>> induced_components(const MutualKnnGraph& g, const std::vector<bool>& mask) {
  const std::size_t n = g.n();
  if (mask.size() != n) throw ParameterError("mask length differs from the graph size");
  std::vector<bool> seen(n, false);
  std::vector<std::vector<SampleId>> components;
  std::vector<SampleId> stack;
  for (SampleId root = 0; root < n; ++root) {
    if (!mask[root] || seen[root]) continue;
    std::vector<SampleId> members;
    stack.push_back(root);
    seen[root] = true;
    while (!stack.empty()) {
      const SampleId v = stack.back();
      stack.pop_back();
      members.push_back(v);
      for (SampleId w : g.neighbors(v)) {
        if (mask[w] && !seen[w]) {
          seen[w] = true;
          stack.push_back(w);
        }
      }
    }
    std::sort(members.begin(), members.end());
    components.push_back(std::move(members));
  }
  return components;
}

std::vector<SampleId> PatternAssignment::members(int pattern) const {
  std::vector<SampleId> out;
  for (SampleId i = 0; i < pattern_of.size(); ++i)
    if (pattern_of[i] == pattern) out.push_back(i);
  return out;
}

PatternAssignment ground_truth_patterns(const MutualKnnGraph& g, const std::vector<bool>& misclassified,
                                        std::size_t m_threshold) {
  PatternAssignment out;
  out.k_nn = g.k_nn();
  out.m_threshold = m_threshold;
  out.pattern_of.assign(g.n(), -1);
  for (const auto& comp : induced_components(g, misclassified)) {
    if (comp.size() < m_threshold) continue;
    ++out.p;
    for (SampleId v : comp) out.pattern_of[v] = out.p;
  }
  return out;
}

void save_truth(const PatternAssignment& truth, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["k_nn"] = truth.k_nn;
  j["m"] = truth.m_threshold;
  j["pattern_of"] = truth.pattern_of;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ground-truth file " + path.string());
  out << j.dump() << '\n';
}

PatternAssignment load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground-truth file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, path.string() + ": " + e.what());
  }
  PatternAssignment out;
  try {
    out.k_nn = j.at("k_nn").get<std::size_t>();
    out.m_threshold = j.at("m").get<std::size_t>();
    out.pattern_of = j.at("pattern_of").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, path.string() + ": " + e.what());
  }
  for (int p : out.pattern_of) {
    if (p == 0 || p < -1) throw ParseError(1, path.string() + ": pattern ids must be -1 or positive");
    out.p = std::max(out.p, p);
  }
  return out;
}

std::vector<std::vector<SampleId>> detect_new_patterns(const MutualKnnGraph& g, DetectionState& state,
                                                       std::span<const SampleId> queried_misclassified,
                                                       std::size_t m_threshold, int round) {
  if (state.consumed.size() != g.n()) state.consumed.resize(g.n(), false);
  std::vector<bool> mask(g.n(), false);
  for (SampleId v : queried_misclassified) {
    if (v >= g.n()) throw ParameterError("sample id " + std::to_string(v) + " out of range");
    if (!state.consumed[v]) mask[v] = true;
  }
  std::vector<std::vector<SampleId>> fresh;
  for (auto& comp : induced_components(g, mask)) {
    if (comp.size() < m_threshold) continue;
    for (SampleId v : comp) state.consumed[v] = true;
    state.confirmed.push_back({comp, round});
    fresh.push_back(std::move(comp));
  }
  return fresh;
}

int match_pattern(const PatternAssignment& truth, std::span<const SampleId> members) {
  std::map<int, std::size_t> votes;
  for (SampleId v : members) ++votes[truth.pattern_of.at(v)];
  const std::size_t unmatched = votes.count(-1) ? votes[-1] : 0;
  int best = -1;
  std::size_t best_votes = 0;
  for (const auto& [pattern, count] : votes) {
    if (pattern > 0 && count > best_votes) {
      best = pattern;
      best_votes = count;
    }
  }
  return best_votes >= unmatched && best_votes > 0 ? best : -1;
}

}  // namespace failure_scout
