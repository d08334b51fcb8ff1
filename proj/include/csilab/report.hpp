// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "csilab/eval.hpp"
#include "csilab/training.hpp"

namespace csilab {

/// task,dataset,ratio,snr_db,nmse_db,se_bps_hz,conf_pred_db,conf_true_db
/// Confidence cells are empty for rows without a confidence estimate.
std::string report_csv(const std::vector<EvalRow>& rows);
/// layer,task,expert,D_i,P_i
std::string routing_csv(const std::vector<RoutingRecord>& records);
/// step,task,L_rec,L_load,lr
std::string loss_trace_csv(const std::vector<LossRecord>& trace);
/// error_db,cumulative_fraction
std::string cdf_csv(const std::vector<std::pair<double, double>>& cdf);

}  // namespace csilab
