#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/rng.hpp"

namespace alqr {

struct ForestParams {
  int num_trees = 500;
  int min_leaf = 5;
  double subsample = 0.5;  // fraction sampled without replacement per tree
  int mtry = 0;            // 0 means ceil(p/3)
  bool honest = false;     // split the subsample: one half grows, one half populates
};

//! CART forest over subsamples. One fitted object serves both aggregations:
//! Meinshausen leaf-weight quantiles and plain mean aggregation. Trees carry
//! independent seeds derived from the forest seed, so fitting order (or any
//! later parallel build) cannot change the result.
class Forest {
 public:
  static Forest fit(const Matrix& x, const std::vector<double>& y,
                    const ForestParams& params, std::uint64_t seed,
                    const std::vector<double>& w = {}) {
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    if (y.size() != n || (!w.empty() && w.size() != n))
      fail_data("LengthMismatch", "forest design/outcome sizes disagree");
    if (params.num_trees < 1) fail_config("InvalidConfig", "num_trees must be >= 1");
    if (params.min_leaf < 1) fail_config("InvalidConfig", "min_leaf must be >= 1");
    if (n < static_cast<std::size_t>(params.min_leaf))
      fail_config("InvalidConfig", "fewer rows than min_leaf");
    if (!(params.subsample > 0.0 && params.subsample <= 1.0))
      fail_config("InvalidConfig", "subsample must lie in (0,1]");

    Forest forest;
    forest.y_ = y;
    forest.min_leaf_ = params.min_leaf;
    forest.order_.resize(n);
    std::iota(forest.order_.begin(), forest.order_.end(), 0);
    std::stable_sort(forest.order_.begin(), forest.order_.end(),
                     [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });

    std::size_t ssize = static_cast<std::size_t>(params.subsample * static_cast<double>(n));
    ssize = std::clamp<std::size_t>(ssize, static_cast<std::size_t>(params.min_leaf), n);
    int mtry = params.mtry > 0
                   ? params.mtry
                   : static_cast<int>((p + 2) / 3);  // ceil(p/3)
    mtry = std::max(1, std::min<int>(mtry, static_cast<int>(p)));

    forest.trees_.resize(static_cast<std::size_t>(params.num_trees));
    for (std::size_t t = 0; t < forest.trees_.size(); ++t) {
      Rng rng(derive_seed(seed, t));
      forest.build_tree(forest.trees_[t], x, y, w, ssize, mtry, rng, params.honest);
    }
    return forest;
  }

  bool empty() const { return trees_.empty(); }
  std::size_t n_train() const { return y_.size(); }

  //! Type-1 weighted quantile of training outcomes under Meinshausen
  //! leaf weights: mean over trees of I{same leaf}/leaf size.
  double predict_quantile(const double* row, double tau) const {
    if (trees_.empty()) fail_numeric("EmptyForest", "no trees fitted");
    std::vector<double> acc(y_.size(), 0.0);
    double total = 0.0;
    for (const Tree& tree : trees_) {
      const Node& leaf = locate(tree, row);
      if (leaf.end == leaf.begin) continue;  // unpopulated honest leaf
      double share = 1.0 / (static_cast<double>(leaf.end - leaf.begin) *
                            static_cast<double>(trees_.size()));
      for (int k = leaf.begin; k < leaf.end; ++k) acc[tree.items[static_cast<std::size_t>(k)]] += share;
      total += share * static_cast<double>(leaf.end - leaf.begin);
    }
    if (total <= 0.0) return weighted_quantile(y_, {}, tau);
    double target = tau * total;
    double cum = 0.0;
    for (std::size_t idx : order_) {
      cum += acc[idx];
      if (cum >= target) return y_[idx];
    }
    return y_[order_.back()];
  }

  //! Average over trees of the leaf mean containing the row.
  double predict_mean(const double* row) const {
    if (trees_.empty()) fail_numeric("EmptyForest", "no trees fitted");
    double acc = 0.0;
    std::size_t used = 0;
    for (const Tree& tree : trees_) {
      const Node& leaf = locate(tree, row);
      if (leaf.end == leaf.begin) continue;  // unpopulated honest leaf
      acc += leaf.value;
      ++used;
    }
    if (used == 0) return weighted_mean(y_, {});
    return acc / static_cast<double>(used);
  }

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;
    double value = 0.0;  // weighted mean of leaf outcomes
  };
  struct Tree {
    std::vector<Node> nodes;
    std::vector<std::size_t> items;  // training row ids, grouped by leaf spans
  };

  const Node& locate(const Tree& tree, const double* row) const {
    return tree.nodes[static_cast<std::size_t>(locate_id(tree, row))];
  }

  static int locate_id(const Tree& tree, const double* row) {
    int cur = 0;
    while (tree.nodes[static_cast<std::size_t>(cur)].feature >= 0) {
      const Node& nd = tree.nodes[static_cast<std::size_t>(cur)];
      cur = row[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return cur;
  }

  void build_tree(Tree& tree, const Matrix& x, const std::vector<double>& y,
                  const std::vector<double>& w, std::size_t ssize, int mtry, Rng& rng,
                  bool honest) {
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < ssize; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(pool[i], pool[j]);
    }
    // Honest trees grow the structure on half of the subsample and fill the
    // leaves with the other half, so no outcome steers its own prediction.
    const std::size_t grow_n = honest ? (ssize + 1) / 2 : ssize;
    tree.items.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(grow_n));

    std::vector<int> feats(p);
    std::iota(feats.begin(), feats.end(), 0);
    auto wt = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };

    struct Job {
      int node;
      int begin;
      int end;
    };
    tree.nodes.push_back({});
    std::vector<Job> stack{{0, 0, static_cast<int>(grow_n)}};
    std::vector<std::size_t> buf;

    while (!stack.empty()) {
      Job job = stack.back();
      stack.pop_back();
      int count = job.end - job.begin;
      auto items_begin = tree.items.begin() + job.begin;
      auto items_end = tree.items.begin() + job.end;

      double wsum = 0.0, wy = 0.0;
      for (auto it = items_begin; it != items_end; ++it) {
        wsum += wt(*it);
        wy += wt(*it) * y[*it];
      }
      double node_score = wsum > 0.0 ? wy * wy / wsum : 0.0;

      int best_feat = -1;
      double best_thresh = 0.0, best_gain = 0.0;
      if (count >= 2 * min_leaf_) {
        // Sample mtry features without replacement, deterministic in rng.
        for (int k = 0; k < mtry; ++k) {
          std::size_t j = static_cast<std::size_t>(k) +
                          static_cast<std::size_t>(rng.below(p - static_cast<std::size_t>(k)));
          std::swap(feats[static_cast<std::size_t>(k)], feats[j]);
        }
        buf.assign(items_begin, items_end);
        for (int k = 0; k < mtry; ++k) {
          int f = feats[static_cast<std::size_t>(k)];
          std::stable_sort(buf.begin(), buf.end(), [&](std::size_t a, std::size_t b) {
            return x(a, static_cast<std::size_t>(f)) < x(b, static_cast<std::size_t>(f));
          });
          double lw = 0.0, lwy = 0.0;
          for (int i = 0; i + 1 < count; ++i) {
            std::size_t row = buf[static_cast<std::size_t>(i)];
            lw += wt(row);
            lwy += wt(row) * y[row];
            if (i + 1 < min_leaf_ || count - i - 1 < min_leaf_) continue;
            double xv = x(row, static_cast<std::size_t>(f));
            double xn = x(buf[static_cast<std::size_t>(i + 1)], static_cast<std::size_t>(f));
            if (xn <= xv) continue;  // no split between tied values
            double rw = wsum - lw, rwy = wy - lwy;
            if (lw <= 0.0 || rw <= 0.0) continue;
            double gain = lwy * lwy / lw + rwy * rwy / rw - node_score;
            if (gain > best_gain * (1.0 + 1e-12) && gain > 1e-12 * (1.0 + node_score)) {
              best_gain = gain;
              best_feat = f;
              best_thresh = 0.5 * (xv + xn);
            }
          }
        }
      }

      auto make_leaf = [&]() {
        Node& nd = tree.nodes[static_cast<std::size_t>(job.node)];
        nd.feature = -1;
        nd.begin = job.begin;
        nd.end = job.end;
        nd.value = wsum > 0.0 ? wy / wsum : 0.0;
      };
      if (best_feat < 0) {
        make_leaf();
        continue;
      }
      auto mid = std::stable_partition(items_begin, items_end, [&](std::size_t i) {
        return x(i, static_cast<std::size_t>(best_feat)) <= best_thresh;
      });
      int split = static_cast<int>(mid - tree.items.begin());
      if (split - job.begin < min_leaf_ || job.end - split < min_leaf_) {
        make_leaf();
        continue;
      }
      int left = static_cast<int>(tree.nodes.size());
      int right = left + 1;
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      Node& nd = tree.nodes[static_cast<std::size_t>(job.node)];
      nd.feature = best_feat;
      nd.threshold = best_thresh;
      nd.left = left;
      nd.right = right;
      stack.push_back({right, split, job.end});
      stack.push_back({left, job.begin, split});
    }

    if (honest) {
      std::vector<std::vector<std::size_t>> bucket(tree.nodes.size());
      for (std::size_t i = grow_n; i < ssize; ++i)
        bucket[static_cast<std::size_t>(locate_id(tree, x.row(pool[i])))].push_back(pool[i]);
      std::vector<std::size_t> items;
      items.reserve(ssize - grow_n);
      for (std::size_t nid = 0; nid < tree.nodes.size(); ++nid) {
        Node& nd = tree.nodes[nid];
        if (nd.feature >= 0) continue;
        nd.begin = static_cast<int>(items.size());
        double lw = 0.0, lwy = 0.0;
        for (std::size_t row : bucket[nid]) {
          items.push_back(row);
          lw += wt(row);
          lwy += wt(row) * y[row];
        }
        nd.end = static_cast<int>(items.size());
        // A leaf no held-out row reached carries no estimate; predictions
        // skip it rather than echo the rows that shaped the split.
        nd.value = lw > 0.0 ? lwy / lw : 0.0;
      }
      tree.items = std::move(items);
    }
  }

  std::vector<Tree> trees_;
  std::vector<double> y_;
  std::vector<std::size_t> order_;  // training rows sorted by outcome
  int min_leaf_ = 5;
};

}  // namespace alqr
