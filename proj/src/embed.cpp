#include "adt/embed.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "adt/error.hpp"
#include "adt/rng.hpp"
#include "adt/simd.hpp"

namespace adt {

bool VocabEmbedding::set(const std::string& word, std::span<const double> vec) {
  if (vec.size() != dim_) throw ValidationError("vector length mismatch for '" + word + "'");
  if (auto it = index_.find(word); it != index_.end()) {
    std::copy(vec.begin(), vec.end(), data_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
    return true;
  }
  index_.emplace(word, words_.size());
  words_.push_back(word);
  data_.insert(data_.end(), vec.begin(), vec.end());
  return false;
}

std::optional<std::span<const double>> VocabEmbedding::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return row(it->second);
}

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

VocabEmbedding train_sgns(const std::vector<std::vector<std::string>>& sentences,
                          const SgnsOptions& opt, std::vector<double>* epoch_losses) {
  if (opt.dim < 2) throw ValidationError("embedding dim must be >= 2");
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];

  // Frequency descending, then lexicographic.
  std::vector<std::pair<std::string, std::uint64_t>> vocab;
  for (const auto& [w, c] : counts)
    if (c >= opt.min_count) vocab.emplace_back(w, c);
  std::stable_sort(vocab.begin(), vocab.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (vocab.size() < 2)
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) +
                          " word(s) after min-count filtering; need at least 2");

  std::unordered_map<std::string, std::uint32_t> ids;
  for (std::uint32_t i = 0; i < vocab.size(); ++i) ids.emplace(vocab[i].first, i);

  std::vector<double> cumulative(vocab.size());
  double total = 0;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    total += std::pow(static_cast<double>(vocab[i].second), 0.75);
    cumulative[i] = total;
  }

  std::vector<std::vector<std::uint32_t>> corpus;
  std::uint64_t n_tokens = 0;
  for (const auto& s : sentences) {
    std::vector<std::uint32_t> ids_s;
    for (const auto& w : s)
      if (auto it = ids.find(w); it != ids.end()) ids_s.push_back(it->second);
    n_tokens += ids_s.size();
    if (ids_s.size() >= 2) corpus.push_back(std::move(ids_s));
  }

  const std::size_t dim = opt.dim;
  Rng rng(opt.seed);
  std::vector<double> in(vocab.size() * dim), out(vocab.size() * dim, 0.0);
  for (auto& x : in) x = (rng.uniform() - 0.5) / static_cast<double>(dim);

  const auto sample_negative = [&]() -> std::uint32_t {
    const double r = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    return static_cast<std::uint32_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                               static_cast<std::ptrdiff_t>(vocab.size()) - 1));
  };

  const auto& k = simd::kernels<double>();
  std::vector<double> grad_in(dim);
  const double total_work = static_cast<double>(opt.epochs) * static_cast<double>(std::max<std::uint64_t>(n_tokens, 1));
  double done = 0;
  if (epoch_losses) epoch_losses->clear();

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss_sum = 0;
    std::uint64_t loss_n = 0;
    for (const auto& sent : corpus) {
      for (std::size_t pos = 0; pos < sent.size(); ++pos, done += 1) {
        const double lr = std::max(opt.learning_rate * (1.0 - done / total_work), opt.learning_rate * 1e-4);
        const std::size_t lo = pos >= opt.window ? pos - opt.window : 0;
        const std::size_t hi = std::min(sent.size(), pos + opt.window + 1);
        double* center = in.data() + static_cast<std::size_t>(sent[pos]) * dim;
        for (std::size_t c = lo; c < hi; ++c) {
          if (c == pos) continue;
          const std::uint32_t context = sent[c];
          std::fill(grad_in.begin(), grad_in.end(), 0.0);
          for (std::size_t d = 0; d <= opt.negatives; ++d) {
            std::uint32_t target;
            double label;
            if (d == 0) {
              target = context;
              label = 1.0;
            } else {
              target = sample_negative();
              if (target == context) continue;
              label = 0.0;
            }
            double* o = out.data() + static_cast<std::size_t>(target) * dim;
            const double score = k.dot(center, o, dim);
            loss_sum -= label > 0 ? log_sigmoid(score) : log_sigmoid(-score);
            const double g = (label - sigmoid(score)) * lr;
            k.axpy(g, o, grad_in.data(), dim);
            k.axpy(g, center, o, dim);
          }
          k.axpy(1.0, grad_in.data(), center, dim);
          ++loss_n;
        }
      }
    }
    if (epoch_losses) epoch_losses->push_back(loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0);
  }

  VocabEmbedding v(dim);
  for (std::size_t i = 0; i < vocab.size(); ++i) v.set(vocab[i].first, {in.data() + i * dim, dim});
  return v;
}

VocabEmbedding load_vectors(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  VocabEmbedding v;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> vals;
  while (std::getline(f, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    vals.clear();
    std::string tok;
    while (ss >> tok) {
      double x = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
      if (ec != std::errc() || p != tok.data() + tok.size())
        throw ParseError("bad number '" + tok + "'", line_no);
      vals.push_back(x);
    }
    if (v.dim() == 0) {
      if (vals.empty()) throw ParseError("no vector values", line_no);
      v = VocabEmbedding(vals.size());
    } else if (vals.size() != v.dim()) {
      throw ParseError("expected " + std::to_string(v.dim()) + " values, found " +
                           std::to_string(vals.size()),
                       line_no);
    }
    if (v.set(word, vals)) {
      std::string msg = "duplicate word '" + word + "' at line " + std::to_string(line_no) +
                        "; last occurrence wins";
      if (warnings) {
        warnings->push_back(std::move(msg));
      } else {
        std::cerr << "warning: " << msg << '\n';
      }
    }
  }
  if (v.size() == 0) throw ValidationError("no vectors in " + path.string());
  return v;
}

void save_vectors(const VocabEmbedding& v, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    f << v.words()[i];
    for (double x : v.row(i)) {
      std::snprintf(buf, sizeof buf, " %.17g", x);
      f << buf;
    }
    f << '\n';
  }
}

StateVector mean_pool(const std::vector<std::string>& tokens, const VocabEmbedding& v, std::size_t* known) {
  StateVector out(v.dim(), 0.0);
  std::size_t n = 0;
  for (const auto& t : tokens) {
    if (auto row = v.find(t)) {
      simd::kernels<double>().axpy(1.0, row->data(), out.data(), out.size());
      ++n;
    }
  }
  if (n > 0)
    for (auto& x : out) x /= static_cast<double>(n);
  if (known) *known = n;
  return out;
}

StateVector embed_turn_pair(const TurnPair& tp, const VocabEmbedding& v, EmbedStats* stats) {
  std::size_t known = 0;
  StateVector s = mean_pool(tokenize(tp.patient_text + " " + tp.therapist_text), v, &known);
  if (known == 0 && stats) stats->all_oov.fetch_add(1, std::memory_order_relaxed);
  return s;
}

double norm(std::span<const double> x) { return std::sqrt(simd::dot<double>(x, x)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(simd::dot<double>(a, b) / (na * nb), -1.0, 1.0);
}

std::vector<std::vector<std::string>> pair_sentences(const std::vector<SessionPairs>& sessions) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : sessions)
    for (const auto& p : s.pairs) out.push_back(tokenize(p.patient_text + " " + p.therapist_text));
  return out;
}

}  // namespace adt
