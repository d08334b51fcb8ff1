// SPDX-License-Identifier: Apache-2.0
#include "csilab/report.hpp"

#include <cstdio>

namespace csilab {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string report_csv(const std::vector<EvalRow>& rows) {
  std::string out = "task,dataset,ratio,snr_db,nmse_db,se_bps_hz,conf_pred_db,conf_true_db\n";
  for (const EvalRow& r : rows) {
    out += r.task + "," + r.dataset + "," + r.ratio + "," + num(r.snr_db) + "," + num(r.nmse_db) + "," +
           num(r.se_bps_hz) + ",";
    if (r.has_confidence) out += num(r.conf_pred_db) + "," + num(r.conf_true_db);
    else out += ",";
    out += "\n";
  }
  return out;
}

std::string routing_csv(const std::vector<RoutingRecord>& records) {
  std::string out = "layer,task,expert,D_i,P_i\n";
  for (const RoutingRecord& r : records) {
    const auto d = r.counts.dispatch_fraction();
    const auto p = r.counts.mean_probability();
    for (std::size_t i = 0; i < d.size(); ++i) {
      out += std::to_string(r.layer) + "," + std::to_string(r.task) + "," + std::to_string(i) + "," +
             num(d[i]) + "," + num(p[i]) + "\n";
    }
  }
  return out;
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::string out = "step,task,L_rec,L_load,lr\n";
  for (const LossRecord& r : trace) {
    out += std::to_string(r.step) + "," + std::to_string(r.task) + "," + sci(r.rec) + "," + sci(r.load) + "," +
           sci(r.lr) + "\n";
  }
  return out;
}

std::string cdf_csv(const std::vector<std::pair<double, double>>& cdf) {
  std::string out = "error_db,cumulative_fraction\n";
  for (const auto& [e, f] : cdf) out += num(e) + "," + num(f) + "\n";
  return out;
}

}  // namespace csilab
