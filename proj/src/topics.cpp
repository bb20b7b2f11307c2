#include "adt/topics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adt/error.hpp"
#include "adt/rng.hpp"
#include "adt/simd.hpp"

namespace adt {

namespace {

constexpr int kMaxIterations = 100;
constexpr const char* kTopicsMagic = "adt-topics";
constexpr int kTopicsVersion = 1;

void normalize_in_place(StateVector& v) {
  const double n = norm(v);
  if (n > 0)
    for (auto& x : v) x /= n;
}

// Best centroid and its cosine for a unit vector.
std::pair<std::size_t, double> nearest(std::span<const double> unit, const std::vector<StateVector>& centroids) {
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double sim = simd::dot<double>(unit, centroids[c]);
    if (sim > best_sim) {
      best_sim = sim;
      best = c;
    }
  }
  return {best, best_sim};
}

}  // namespace

TopicModel fit_topics(const std::vector<StateVector>& states, std::size_t k, std::uint64_t seed, FitTrace* trace) {
  if (k == 0) throw ValidationError("k must be >= 1");
  std::vector<StateVector> points;
  for (const auto& s : states) {
    if (norm(s) > 0) {
      points.push_back(s);
      normalize_in_place(points.back());
    }
  }
  if (points.size() < k)
    throw ValidationError("need at least " + std::to_string(k) + " nonzero state vectors, got " +
                          std::to_string(points.size()));
  const std::size_t dim = points.front().size();
  const std::size_t n = points.size();

  TopicModel m{k, dim, seed, {}};
  Rng rng(seed);

  // k-means++ with distance 1 - cosine.
  m.centroids.push_back(points[rng.below(n)]);
  std::vector<double> best_sim(n);
  for (std::size_t i = 0; i < n; ++i) best_sim[i] = simd::dot<double>(points[i], m.centroids[0]);
  while (m.centroids.size() < k) {
    double total = 0;
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::max(0.0, 1.0 - best_sim[i]);
      w[i] = d * d;
      total += w[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if (r < w[pick]) break;
        r -= w[pick];
      }
    } else {
      pick = rng.below(n);
    }
    m.centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i)
      best_sim[i] = std::max(best_sim[i], simd::dot<double>(points[i], m.centroids.back()));
  }

  std::vector<std::size_t> assign(n, k);
  std::size_t iter = 0;
  for (; iter < kMaxIterations; ++iter) {
    bool changed = false;
    double objective = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [c, sim] = nearest(points[i], m.centroids);
      best_sim[i] = sim;
      objective += sim;
      if (assign[i] != c) {
        assign[i] = c;
        changed = true;
      }
    }
    if (trace) trace->objective.push_back(objective);
    if (!changed) break;

    std::vector<StateVector> sums(k, StateVector(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      simd::kernels<double>().axpy(1.0, points[i].data(), sums[assign[i]].data(), dim);
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0 && norm(sums[c]) > 0) {
        normalize_in_place(sums[c]);
        m.centroids[c] = std::move(sums[c]);
      } else {
        // Re-seed at the point the current centroids serve worst.
        std::size_t worst = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (best_sim[i] < best_sim[worst]) worst = i;
        m.centroids[c] = points[worst];
        best_sim[worst] = 1.0;
      }
    }
  }
  if (trace) trace->iterations = iter;
  return m;
}

ActionId assign_topic(std::span<const double> s, const TopicModel& m) {
  const double ns = norm(s);
  if (ns == 0.0) return 0;
  ActionId best = 0;
  double best_sim = -2.0;
  for (std::size_t c = 0; c < m.centroids.size(); ++c) {
    const double sim = simd::dot<double>(s, m.centroids[c]);
    if (sim > best_sim) {
      best_sim = sim;
      best = static_cast<ActionId>(c);
    }
  }
  return best;
}

std::vector<std::vector<std::string>> topic_top_words(const TopicModel& m, const VocabEmbedding& v, std::size_t n) {
  if (n == 0) throw ValidationError("n must be >= 1");
  std::vector<std::vector<std::string>> out;
  std::vector<std::pair<double, std::size_t>> scored(v.size());
  for (const auto& c : m.centroids) {
    for (std::size_t w = 0; w < v.size(); ++w) scored[w] = {cosine(v.row(w), c), w};
    const std::size_t take = std::min(n, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [&](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return v.words()[a.second] < v.words()[b.second];
                      });
    std::vector<std::string> words;
    for (std::size_t i = 0; i < take; ++i) words.push_back(v.words()[scored[i].second]);
    out.push_back(std::move(words));
  }
  return out;
}

void save_topic_model(const TopicModel& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << kTopicsMagic << ' ' << kTopicsVersion << '\n' << m.k << ' ' << m.dim << ' ' << m.seed << '\n';
  char buf[32];
  for (const auto& c : m.centroids) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      std::snprintf(buf, sizeof buf, i ? " %.17g" : "%.17g", c[i]);
      f << buf;
    }
    f << '\n';
  }
}

TopicModel load_topic_model(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string magic;
  int version = 0;
  if (!(f >> magic >> version) || magic != kTopicsMagic) throw ParseError("not a topic model file", 1);
  if (version != kTopicsVersion) throw ParseError("unsupported topic model version " + std::to_string(version), 1);
  TopicModel m;
  if (!(f >> m.k >> m.dim >> m.seed)) throw ParseError("bad header", 2);
  if (m.k == 0 || m.dim == 0) throw ParseError("k and dim must be positive", 2);
  std::string line;
  std::getline(f, line);
  for (std::size_t c = 0; c < m.k; ++c) {
    if (!std::getline(f, line)) throw ParseError("missing centroid", c + 3);
    std::istringstream ss(line);
    StateVector v;
    double x;
    while (ss >> x) v.push_back(x);
    if (v.size() != m.dim) throw ParseError("centroid has wrong dimension", c + 3);
    m.centroids.push_back(std::move(v));
  }
  return m;
}

}  // namespace adt
