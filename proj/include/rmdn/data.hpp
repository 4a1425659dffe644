#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "rmdn/common.hpp"

namespace rmdn {

enum class Label { Normal, Anomaly, Unknown };
std::string to_string(Label label);
Label label_from_string(const std::string& s);

// Universal data carrier: one recording's T x P feature-frame matrix.
struct FrameSequence {
  Eigen::MatrixXd values;  // time-major
  std::string recording_id;
  std::string machine_id;
  Label label = Label::Unknown;

  int frames() const { return static_cast<int>(values.rows()); }
  int dims() const { return static_cast<int>(values.cols()); }
};

enum class AnomalyType { FreqShift, AmplitudeBurst, ExtraTone };
std::string to_string(AnomalyType type);
AnomalyType anomaly_from_string(const std::string& s);

// Per-dimension sinusoids with AR(1) noise; anomalous recordings carry a
// planted deviation over a random 20-50% contiguous span.
struct SynthSpec {
  int dims = 8;
  int frames = 90;
  int n_normal = 10;
  int n_anomalous = 0;
  std::vector<double> freq;       // cycles per frame, per dimension
  std::vector<double> amp;
  std::vector<double> ar_coef;    // in (-1, 1)
  std::vector<double> noise_std;
  AnomalyType anomaly = AnomalyType::FreqShift;
  double anomaly_magnitude = 0.5;
  std::uint64_t seed = 0;
  std::string machine_id = "m00";
  std::string id_prefix;

  // broadcasts scalar parameter lists to all dimensions and fills defaults
  void resolve();
  void validate() const;
};

struct SynthResult {
  std::vector<FrameSequence> normal;
  std::vector<FrameSequence> anomalous;
};
SynthResult generate(const SynthSpec& spec);

// Per-dimension affine map fitted so the training data lands in [-1, 1].
struct ScalerRecord {
  Eigen::VectorXd slope, offset;  // y = slope * x + offset
  int constant_dims = 0;          // dimensions collapsed to zero

  int dims() const { return static_cast<int>(slope.size()); }
};
ScalerRecord fit_scaler(std::span<const FrameSequence> train);
FrameSequence apply_scaler(const ScalerRecord& scaler, const FrameSequence& rec);
std::vector<FrameSequence> apply_scaler(const ScalerRecord& scaler,
                                        std::span<const FrameSequence> recs);
std::string scaler_to_json(const ScalerRecord& scaler);
ScalerRecord scaler_from_json(const std::string& text);

// -------- file formats --------

// binary FSEQ: magic, version, T, P, row-major fp64, CRC32 trailer
void save_fseq(const std::string& path, const Eigen::MatrixXd& values);
Eigen::MatrixXd load_fseq(const std::string& path);

// CSV with header t,f0,...,f{P-1}; 17 significant digits
void save_frames_csv(const std::string& path, const Eigen::MatrixXd& values);
Eigen::MatrixXd load_frames_csv(const std::string& path);

// dataset manifest: recording_id,machine_id,label,split,path
struct ManifestEntry {
  std::string recording_id;
  std::string machine_id;
  Label label = Label::Unknown;
  std::string split;  // "train" or "test"
  std::string path;   // relative to the manifest's directory
};
void save_manifest(const std::string& path, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

}  // namespace rmdn
