#include "rmdn/checkpoint.hpp"

#include <zlib.h>

#include <json.hpp>

namespace rmdn {

namespace {

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, nullptr, 0), reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string to_string(Family family) {
  return family == Family::Gaussian ? "gaussian" : "student_t";
}

Family family_from_string(const std::string& s) {
  if (s == "gaussian") return Family::Gaussian;
  if (s == "student_t") return Family::StudentT;
  throw ParseError("unknown family: " + s);
}

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["input_dim"] = cfg.input_dim;
  j["hidden"] = cfg.hidden;
  j["layers"] = cfg.layers;
  j["seq_len"] = cfg.seq_len;
  j["components"] = cfg.components;
  j["family"] = to_string(cfg.family);
  j["multires"] = cfg.multires;
  j["attention"] = cfg.attention;
  j["resolutions"] = cfg.resolutions;
  j["conv_kernel"] = cfg.conv_kernel;
  j["conv_stride"] = cfg.conv_stride;
  j["conv_padding"] = cfg.conv_padding;
  j["nu_lo"] = cfg.nu_lo;
  j["nu_hi"] = cfg.nu_hi;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.input_dim = j.at("input_dim").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.layers = j.at("layers").get<int>();
    cfg.seq_len = j.at("seq_len").get<int>();
    cfg.components = j.at("components").get<int>();
    cfg.family = family_from_string(j.at("family").get<std::string>());
    cfg.multires = j.at("multires").get<bool>();
    cfg.attention = j.at("attention").get<bool>();
    cfg.resolutions = j.value("resolutions", 2);
    cfg.conv_kernel = j.value("conv_kernel", 10);
    cfg.conv_stride = j.value("conv_stride", 3);
    cfg.conv_padding = j.value("conv_padding", 0);
    cfg.nu_lo = j.value("nu_lo", 1.0);
    cfg.nu_hi = j.value("nu_hi", 10.0);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model config json: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelWeights& weights) {
  validate_weights(weights, cfg);
  std::string buf = "RMDN";
  append_u32(buf, kCheckpointVersion);
  const std::string config_json = config_to_json(cfg);
  append_u64(buf, config_json.size());
  buf += config_json;
  append_u64(buf, weights.tensors.size());
  for (const auto& [name, tensor] : weights.tensors) {
    append_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    append_u32(buf, 2);  // rank
    append_u64(buf, static_cast<std::uint64_t>(tensor.rows()));
    append_u64(buf, static_cast<std::uint64_t>(tensor.cols()));
    for (Eigen::Index i = 0; i < tensor.rows(); ++i)
      for (Eigen::Index j = 0; j < tensor.cols(); ++j) append_f64(buf, tensor(i, j));
  }
  append_u32(buf, crc_of(buf));
  write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 8 || buf.compare(0, 4, "RMDN") != 0)
    throw CorruptFileError("not a checkpoint file: " + path);
  const std::string body = buf.substr(0, buf.size() - 4);
  std::size_t pos = body.size();
  if (read_u32(buf, pos) != crc_of(body))
    throw CorruptFileError("checkpoint checksum mismatch: " + path);

  pos = 4;
  const std::uint32_t version = read_u32(buf, pos);
  if (version != kCheckpointVersion)
    throw CorruptFileError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t json_len = read_u64(buf, pos);
  if (pos + json_len > body.size()) throw CorruptFileError("truncated checkpoint: " + path);
  Checkpoint ck;
  ck.config = config_from_json(buf.substr(pos, json_len));
  pos += json_len;

  const std::uint64_t n_tensors = read_u64(buf, pos);
  for (std::uint64_t k = 0; k < n_tensors; ++k) {
    const std::uint32_t name_len = read_u32(buf, pos);
    if (pos + name_len > body.size()) throw CorruptFileError("truncated checkpoint: " + path);
    const std::string name = buf.substr(pos, name_len);
    pos += name_len;
    const std::uint32_t rank = read_u32(buf, pos);
    if (rank != 2) throw CorruptFileError("unsupported tensor rank in " + path);
    const auto rows = static_cast<Eigen::Index>(read_u64(buf, pos));
    const auto cols = static_cast<Eigen::Index>(read_u64(buf, pos));
    if (rows < 0 || cols < 0) throw CorruptFileError("bad tensor shape in " + path);
    Eigen::MatrixXd tensor(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) tensor(i, j) = read_f64(buf, pos);
    ck.weights.tensors.emplace(name, std::move(tensor));
  }
  validate_weights(ck.weights, ck.config);
  return ck;
}

}  // namespace rmdn
