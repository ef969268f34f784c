#pragma once

// Reference implementations written independently of the library, used to
// cross-check it.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace oracles {

struct Scored {
  std::string id;
  long double score;
};

// Full cosine sort in long double; equal scores fall back to id order.
inline std::vector<std::string> brute_force_knn(const std::vector<std::string>& ids,
                                                const std::vector<std::vector<float>>& rows,
                                                const std::vector<float>& query, std::size_t k,
                                                const std::string& exclude = {}) {
  auto norm = [](const std::vector<float>& v) {
    long double s = 0;
    for (float x : v) s += static_cast<long double>(x) * x;
    return std::sqrt(s);
  };
  const long double qn = norm(query);
  std::vector<Scored> all;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == exclude) continue;
    long double dot = 0;
    for (std::size_t d = 0; d < query.size(); ++d) dot += static_cast<long double>(rows[i][d]) * query[d];
    all.push_back({ids[i], dot / (norm(rows[i]) * qn)});
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].id);
  return out;
}

struct Micro {
  double p = 0, r = 0, f1 = 0;
};

// Micro scores over label names; `null` marks the no-relation class. With
// drop_null, a NULL prediction is not a prediction and a NULL gold is not a
// target.
inline Micro micro_scores(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                          const std::string& null, bool drop_null) {
  double predicted = 0, relevant = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool pred_counts = !drop_null || pred[i] != null;
    const bool gold_counts = !drop_null || gold[i] != null;
    if (pred_counts) predicted += 1;
    if (gold_counts) relevant += 1;
    if (pred_counts && gold_counts && pred[i] == gold[i]) correct += 1;
  }
  Micro m;
  m.p = predicted == 0 ? 0 : correct / predicted;
  m.r = relevant == 0 ? 0 : correct / relevant;
  m.f1 = m.p + m.r == 0 ? 0 : 2 * m.p * m.r / (m.p + m.r);
  return m;
}

}  // namespace oracles
