#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "amam/detect_eval.hpp"
#include "amam/pyramid.hpp"
#include "amam/tensor.hpp"
#include "amam/train.hpp"

namespace amam {

// ---- AMTN v1 tensor container -----------------------------------------------
// Magic "AMTN", version byte 0x01, four u32 little-endian dims N,C,H,W, then
// N*C*H*W IEEE-754 little-endian 32-bit floats in row-major (N,C,H,W) order.

void write_amtn(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_amtn(const std::filesystem::path& path);

// ---- module configuration ----------------------------------------------------

AmamConfig config_from_json_text(const std::string& text);
AmamConfig config_from_json_file(const std::filesystem::path& path);
std::string config_to_json(const AmamConfig& cfg);

// ---- parameter container ------------------------------------------------------
// One .amtn file per named tensor plus manifest.json recording kernel sizes,
// channel counts, activation kinds, head count, d_qk, fusion mode, and the
// cascade logits as decimal strings.

void save_amam_params(const std::filesystem::path& dir, const AmamConfig& cfg,
                      const AmamParams& params);
AmamParams load_amam_params(const std::filesystem::path& dir, const AmamConfig& cfg);

// ---- detection data -----------------------------------------------------------
// {"images":[{"id":"...","gt":[[x1,y1,x2,y2],...],"det":[[x1,y1,x2,y2,score],...]}]}

EvalData detections_from_json_text(const std::string& text);
EvalData detections_from_json_file(const std::filesystem::path& path);
std::string detections_to_json(const EvalData& data);

/// Fixed 6-decimal formatting for every metric value.
std::string report_to_json(const EvalReport& report);

// ---- CSV ----------------------------------------------------------------------

std::string format_sig9(double value);  // 9 significant digits
/// header "iter,lr,loss", 9 significant digits, LF line endings.
std::string trace_to_csv(const TrainTrace& trace);
/// header "recall,precision" over ranked detections.
std::string pr_curve_to_csv(const std::vector<std::array<double, 2>>& points);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace amam
