#include "rmdn/data.hpp"

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace rmdn {

namespace {

constexpr std::uint32_t kFseqVersion = 1;

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, nullptr, 0), reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size())));
}

double parse_double(std::string_view tok, int row, int col) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw ParseError("non-numeric cell at row " + std::to_string(row) + ", column " +
                     std::to_string(col));
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

std::string to_string(Label label) {
  switch (label) {
    case Label::Normal: return "normal";
    case Label::Anomaly: return "anomaly";
    default: return "unknown";
  }
}

Label label_from_string(const std::string& s) {
  if (s == "normal") return Label::Normal;
  if (s == "anomaly") return Label::Anomaly;
  if (s == "unknown") return Label::Unknown;
  throw ParseError("unknown label: " + s);
}

std::string to_string(AnomalyType type) {
  switch (type) {
    case AnomalyType::FreqShift: return "freq_shift";
    case AnomalyType::AmplitudeBurst: return "amplitude_burst";
    default: return "extra_tone";
  }
}

AnomalyType anomaly_from_string(const std::string& s) {
  if (s == "freq_shift") return AnomalyType::FreqShift;
  if (s == "amplitude_burst") return AnomalyType::AmplitudeBurst;
  if (s == "extra_tone") return AnomalyType::ExtraTone;
  throw ParseError("unknown anomaly type: " + s);
}

void SynthSpec::resolve() {
  auto broadcast = [this](std::vector<double>& v, double fallback) {
    if (v.empty()) v.assign(static_cast<std::size_t>(dims), fallback);
    if (v.size() == 1) v.assign(static_cast<std::size_t>(dims), v.front());
    if (static_cast<int>(v.size()) != dims)
      throw std::invalid_argument("per-dimension parameter list has wrong length");
  };
  if (freq.empty()) {
    freq.reserve(static_cast<std::size_t>(dims));
    for (int d = 0; d < dims; ++d)
      freq.push_back(0.03 + 0.22 * static_cast<double>(d) / std::max(dims - 1, 1));
  }
  broadcast(freq, 0.1);
  broadcast(amp, 1.0);
  broadcast(ar_coef, 0.5);
  broadcast(noise_std, 0.1);
  validate();
}

void SynthSpec::validate() const {
  if (dims < 1 || frames < 1) throw std::invalid_argument("synth spec needs dims, frames >= 1");
  if (n_normal < 0 || n_anomalous < 0) throw std::invalid_argument("negative recording count");
  for (double a : ar_coef)
    if (!(a > -1.0 && a < 1.0)) throw std::invalid_argument("AR coefficient must be in (-1, 1)");
  for (double s : noise_std)
    if (s < 0.0) throw std::invalid_argument("noise std must be non-negative");
}

namespace {

FrameSequence synth_recording(const SynthSpec& spec, const std::string& rec_id, bool anomalous) {
  Rng rng = named_stream(spec.seed, "synth." + rec_id);
  const int t_len = spec.frames, p = spec.dims;

  int span_start = 0, span_len = 0;
  if (anomalous) {
    span_len = static_cast<int>(std::floor(t_len * rng.uniform(0.2, 0.5)));
    span_len = std::max(span_len, 1);
    span_start = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(t_len - span_len + 1)));
  }

  std::vector<double> phase(static_cast<std::size_t>(p)), phase2(static_cast<std::size_t>(p)),
      noise(static_cast<std::size_t>(p), 0.0);
  for (int d = 0; d < p; ++d) {
    phase[static_cast<std::size_t>(d)] = rng.uniform(0.0, 2.0 * M_PI);
    phase2[static_cast<std::size_t>(d)] = rng.uniform(0.0, 2.0 * M_PI);
  }

  FrameSequence rec;
  rec.values.resize(t_len, p);
  rec.recording_id = rec_id;
  rec.machine_id = spec.machine_id;
  rec.label = anomalous ? Label::Anomaly : Label::Normal;

  const double mag = spec.anomaly_magnitude;
  for (int t = 0; t < t_len; ++t) {
    const bool in_span = anomalous && t >= span_start && t < span_start + span_len;
    for (int d = 0; d < p; ++d) {
      const auto di = static_cast<std::size_t>(d);
      double freq = spec.freq[di];
      double amp = spec.amp[di];
      if (in_span && spec.anomaly == AnomalyType::FreqShift) freq *= 1.0 + mag;
      if (in_span && spec.anomaly == AnomalyType::AmplitudeBurst) amp *= 1.0 + mag;
      double value = amp * std::sin(phase[di]);
      if (in_span && spec.anomaly == AnomalyType::ExtraTone) {
        const double f2 = std::min(spec.freq[di] * 1.7, 0.45);
        value += mag * spec.amp[di] * std::sin(phase2[di]);
        phase2[di] += 2.0 * M_PI * f2;
      }
      noise[di] = spec.ar_coef[di] * noise[di] + spec.noise_std[di] * rng.normal();
      rec.values(t, d) = value + noise[di];
      phase[di] += 2.0 * M_PI * freq;  // phase-continuous frequency shifts
    }
  }
  return rec;
}

}  // namespace

SynthResult generate(const SynthSpec& raw_spec) {
  SynthSpec spec = raw_spec;
  spec.resolve();
  SynthResult result;
  for (int i = 0; i < spec.n_normal; ++i)
    result.normal.push_back(synth_recording(spec, spec.id_prefix + "normal_" + zero_pad(i, 4), false));
  for (int i = 0; i < spec.n_anomalous; ++i)
    result.anomalous.push_back(
        synth_recording(spec, spec.id_prefix + "anomaly_" + zero_pad(i, 4), true));
  return result;
}

ScalerRecord fit_scaler(std::span<const FrameSequence> train) {
  if (train.empty()) throw std::invalid_argument("fit_scaler: no training recordings");
  const int p = train.front().dims();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  for (const auto& rec : train) {
    if (rec.dims() != p) throw std::invalid_argument("recordings disagree on dimension");
    lo = lo.cwiseMin(rec.values.colwise().minCoeff().transpose());
    hi = hi.cwiseMax(rec.values.colwise().maxCoeff().transpose());
  }
  ScalerRecord scaler;
  scaler.slope.resize(p);
  scaler.offset.resize(p);
  for (int d = 0; d < p; ++d) {
    if (hi[d] > lo[d]) {
      scaler.slope[d] = 2.0 / (hi[d] - lo[d]);
      scaler.offset[d] = -1.0 - scaler.slope[d] * lo[d];
    } else {
      scaler.slope[d] = 0.0;  // constant dimension, mapped to zero
      scaler.offset[d] = 0.0;
      scaler.constant_dims += 1;
    }
  }
  return scaler;
}

FrameSequence apply_scaler(const ScalerRecord& scaler, const FrameSequence& rec) {
  if (rec.dims() != scaler.dims())
    throw std::invalid_argument("scaler dimension does not match recording");
  FrameSequence out = rec;
  out.values = (rec.values * scaler.slope.asDiagonal()).rowwise() + scaler.offset.transpose();
  return out;
}

std::vector<FrameSequence> apply_scaler(const ScalerRecord& scaler,
                                        std::span<const FrameSequence> recs) {
  std::vector<FrameSequence> out;
  out.reserve(recs.size());
  for (const auto& rec : recs) out.push_back(apply_scaler(scaler, rec));
  return out;
}

std::string scaler_to_json(const ScalerRecord& scaler) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["slope"] = std::vector<double>(scaler.slope.data(), scaler.slope.data() + scaler.slope.size());
  j["offset"] =
      std::vector<double>(scaler.offset.data(), scaler.offset.data() + scaler.offset.size());
  j["constant_dims"] = scaler.constant_dims;
  return j.dump(2) + "\n";
}

ScalerRecord scaler_from_json(const std::string& text) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    ScalerRecord scaler;
    const auto slope = j.at("slope").get<std::vector<double>>();
    const auto offset = j.at("offset").get<std::vector<double>>();
    if (slope.size() != offset.size()) throw ParseError("scaler slope/offset length mismatch");
    scaler.slope = Eigen::Map<const Eigen::VectorXd>(slope.data(), static_cast<Eigen::Index>(slope.size()));
    scaler.offset =
        Eigen::Map<const Eigen::VectorXd>(offset.data(), static_cast<Eigen::Index>(offset.size()));
    scaler.constant_dims = j.value("constant_dims", 0);
    return scaler;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad scaler json: ") + e.what());
  }
}

void save_fseq(const std::string& path, const Eigen::MatrixXd& values) {
  if (values.rows() == 0 || values.cols() == 0)
    throw std::invalid_argument("refusing to save an empty frame matrix");
  if (!values.allFinite())
    throw std::invalid_argument("refusing to save non-finite frame values");
  std::string buf = "FSEQ";
  append_u32(buf, kFseqVersion);
  append_u64(buf, static_cast<std::uint64_t>(values.rows()));
  append_u64(buf, static_cast<std::uint64_t>(values.cols()));
  for (Eigen::Index t = 0; t < values.rows(); ++t)
    for (Eigen::Index d = 0; d < values.cols(); ++d) append_f64(buf, values(t, d));
  append_u32(buf, crc_of(buf));
  write_file(path, buf);
}

Eigen::MatrixXd load_fseq(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 8 || buf.compare(0, 4, "FSEQ") != 0)
    throw CorruptFileError("not an FSEQ file: " + path);
  const std::string body = buf.substr(0, buf.size() - 4);
  std::size_t pos = body.size();
  if (read_u32(buf, pos) != crc_of(body)) throw CorruptFileError("FSEQ checksum mismatch: " + path);
  pos = 4;
  const std::uint32_t version = read_u32(buf, pos);
  if (version != kFseqVersion)
    throw CorruptFileError("unsupported FSEQ version " + std::to_string(version));
  const auto t_len = static_cast<Eigen::Index>(read_u64(buf, pos));
  const auto p = static_cast<Eigen::Index>(read_u64(buf, pos));
  if (t_len < 1 || p < 1 || body.size() != 24 + static_cast<std::size_t>(t_len * p) * 8)
    throw CorruptFileError("FSEQ geometry does not match file size: " + path);
  Eigen::MatrixXd values(t_len, p);
  for (Eigen::Index t = 0; t < t_len; ++t)
    for (Eigen::Index d = 0; d < p; ++d) values(t, d) = read_f64(buf, pos);
  if (!values.allFinite()) throw CorruptFileError("FSEQ holds non-finite values: " + path);
  return values;
}

void save_frames_csv(const std::string& path, const Eigen::MatrixXd& values) {
  if (values.rows() == 0 || values.cols() == 0)
    throw std::invalid_argument("refusing to save an empty frame matrix");
  std::ostringstream out;
  out << "t";
  for (Eigen::Index d = 0; d < values.cols(); ++d) out << ",f" << d;
  out << "\n";
  for (Eigen::Index t = 0; t < values.rows(); ++t) {
    out << t;
    for (Eigen::Index d = 0; d < values.cols(); ++d) out << "," << format_full(values(t, d));
    out << "\n";
  }
  write_file(path, out.str());
}

Eigen::MatrixXd load_frames_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorruptFileError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV: " + path);
  const auto header = split_csv_line(line);
  if (header.empty() || header.front() != "t")
    throw ParseError("bad CSV header (expected t,f0,...): " + path);
  const int p = static_cast<int>(header.size()) - 1;
  if (p < 1) throw ParseError("CSV has no feature columns: " + path);

  std::vector<double> flat;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != p + 1)
      throw ParseError("ragged CSV at row " + std::to_string(row) + " (expected " +
                       std::to_string(p + 1) + " cells, got " + std::to_string(cells.size()) + ")");
    for (int d = 0; d < p; ++d)
      flat.push_back(parse_double(cells[static_cast<std::size_t>(d + 1)], row, d + 1));
  }
  if (row == 0) throw ParseError("CSV has no data rows: " + path);
  Eigen::MatrixXd values(row, p);
  for (int t = 0; t < row; ++t)
    for (int d = 0; d < p; ++d) values(t, d) = flat[static_cast<std::size_t>(t * p + d)];
  return values;
}

void save_manifest(const std::string& path, std::span<const ManifestEntry> entries) {
  std::ostringstream out;
  out << "recording_id,machine_id,label,split,path\n";
  for (const auto& e : entries)
    out << e.recording_id << "," << e.machine_id << "," << to_string(e.label) << "," << e.split
        << "," << e.path << "\n";
  write_file(path, out.str());
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorruptFileError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "recording_id,machine_id,label,split,path")
    throw ParseError("bad manifest header: " + path);
  std::vector<ManifestEntry> entries;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != 5)
      throw ParseError("ragged manifest at row " + std::to_string(row));
    entries.push_back({cells[0], cells[1], label_from_string(cells[2]), cells[3], cells[4]});
  }
  return entries;
}

}  // namespace rmdn
