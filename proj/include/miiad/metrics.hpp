#pragma once

#include <vector>

#include "miiad/data.hpp"
#include "miiad/tensor.hpp"

namespace miiad::metrics {

using miiad::Tensor;
using miiad::data::BinaryMap;

struct RocCurve {
    std::vector<double> thresholds;  // descending
    std::vector<double> fpr, tpr;    // aligned, nondecreasing, from (0,0) to (1,1)
};

// ROC over all distinct score values. Ties fall into one sweep step, which
// matches the pairwise win-rate with ties counted 1/2.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// AUROC over the pooled pixels of all maps.
double pixel_auroc(const std::vector<Tensor>& maps, const std::vector<BinaryMap>& masks);

struct ProCurve {
    std::vector<double> fpr;  // nondecreasing
    std::vector<double> pro;  // mean per-region overlap at each sweep step
};

ProCurve pro_curve(const std::vector<Tensor>& maps, const std::vector<BinaryMap>& masks,
                   bool eight_connectivity = true);

// Area under the per-region-overlap curve for FPR in [0, fpr_limit],
// trapezoidal with boundary interpolation, normalized by fpr_limit.
double aupro(const std::vector<Tensor>& maps, const std::vector<BinaryMap>& masks, double fpr_limit = 0.3,
             bool eight_connectivity = true);

// Connected-component labeling; returns labels (-1 for background) and the
// number of regions found.
int label_regions(const BinaryMap& mask, std::vector<int>& labels, bool eight_connectivity);

}  // namespace miiad::metrics
