// Independent reference implementations used as test oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

namespace oracle {

// Rand-index style pair enumeration, no contingency table.
inline double ari_by_pairs(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  double both = 0, same_a = 0, same_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      same_a += sa;
      same_b += sb;
    }
  }
  const double pairs = n * (n - 1) / 2.0;
  const double expected = same_a * same_b / pairs;
  const double max_index = 0.5 * (same_a + same_b);
  if (max_index == expected) return (same_a == same_b && both == same_a) ? 1.0 : 0.0;
  return (both - expected) / (max_index - expected);
}

// Best (matched count, then macro F1) over every injective pairing of labels.
inline double mode_f1_by_enumeration(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::vector<int> tl(truth.begin(), truth.end()), pl(pred.begin(), pred.end());
  std::sort(tl.begin(), tl.end());
  tl.erase(std::unique(tl.begin(), tl.end()), tl.end());
  std::sort(pl.begin(), pl.end());
  pl.erase(std::unique(pl.begin(), pl.end()), pl.end());
  // Pad the predicted side with "unmatched" slots (-1) so every permutation of
  // the padded list is a partial injection.
  std::vector<int> slots = pl;
  while (slots.size() < tl.size()) slots.push_back(-1 - static_cast<int>(slots.size()));
  std::sort(slots.begin(), slots.end());
  double best_count = -1, best_f1 = -1;
  do {
    double count = 0, f1 = 0;
    for (std::size_t k = 0; k < tl.size(); ++k) {
      const int p = slots[k];
      double tp = 0, np = 0, nt = 0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        tp += (truth[i] == tl[k] && pred[i] == p);
        np += pred[i] == p;
        nt += truth[i] == tl[k];
      }
      count += tp;
      if (np > 0) f1 += 2 * tp / (np + nt);
    }
    f1 /= tl.size();
    if (count > best_count || (count == best_count && f1 > best_f1 + 1e-12)) {
      best_count = count;
      best_f1 = f1;
    }
  } while (std::next_permutation(slots.begin(), slots.end()));
  return best_f1;
}

// Calls fn on every restricted-growth string of length n with at most k labels.
inline void for_each_partition(int n, int k, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> s(static_cast<std::size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int pos, int used) {
    if (pos == n) {
      fn(s);
      return;
    }
    for (int v = 0; v <= std::min(used, k - 1); ++v) {
      s[static_cast<std::size_t>(pos)] = v;
      rec(pos + 1, std::max(used, v + 1));
    }
  };
  rec(0, 0);
}

// Calls fn on every sequence of length n over k labels.
inline void for_each_sequence(int n, int k, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> s(static_cast<std::size_t>(n), 0);
  while (true) {
    fn(s);
    int i = 0;
    while (i < n && ++s[static_cast<std::size_t>(i)] == k) s[static_cast<std::size_t>(i++)] = 0;
    if (i == n) break;
  }
}

}  // namespace oracle
