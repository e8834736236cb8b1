#include "spanflow/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "spanflow/common.hpp"

namespace spanflow::gnn {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

json encode_block(const Eigen::Ref<const Eigen::MatrixXd>& m, bool as_vector) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * 4);
  std::size_t off = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      std::memcpy(bytes.data() + off, &f, 4);
      off += 4;
    }
  json shape = as_vector ? json::array({m.size()}) : json::array({m.rows(), m.cols()});
  return {{"shape", shape}, {"dtype", "f32"}, {"data", base64_encode(bytes)}};
}

}  // namespace

json encode_tensor(const Eigen::MatrixXd& m) { return encode_block(m, false); }

json encode_vector(const Eigen::VectorXd& v) { return encode_block(v, true); }

Eigen::MatrixXd decode_tensor(const json& j) {
  try {
    if (j.at("dtype").get<std::string>() != "f32") throw ValidationError("tensor dtype must be f32");
    const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.empty() || shape.size() > 2) throw ValidationError("tensor shape must have rank 1 or 2");
    const Eigen::Index rows = shape[0], cols = shape.size() == 2 ? shape[1] : 1;
    const auto bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4)
      throw ValidationError("tensor data length does not match its shape");
    Eigen::MatrixXd m(rows, cols);
    std::size_t off = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        float f;
        std::memcpy(&f, bytes.data() + off, 4);
        off += 4;
        m(r, c) = f;
      }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed tensor: ") + e.what());
  }
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  json tensors = json::object();
  for_each_param(ckpt.stack, [&](const std::string& name, auto buf, Eigen::Index rows, Eigen::Index cols) {
    Eigen::Map<const Eigen::MatrixXd> m(buf.data(), rows, cols);
    const bool is_vector = name.find(".w") == std::string::npos;
    tensors[name] = encode_block(m, is_vector);
  });
  tensors["embedding"] = encode_tensor(ckpt.embedding);
  json config = ckpt.config.is_object() ? ckpt.config : json::object();
  config["model"] = ckpt.model.to_json();
  return {{"version", kCheckpointVersion}, {"config", config}, {"tensors", tensors}};
}

Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint ckpt;
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ValidationError("unsupported checkpoint version " + j.at("version").dump());
    ckpt.config = j.at("config");
    ckpt.model = ModelConfig::from_json(ckpt.config.at("model"));
    ckpt.stack = init_stack(ckpt.model, 0);
    const json& tensors = j.at("tensors");
    for_each_param(ckpt.stack, [&](const std::string& name, std::span<double> buf, Eigen::Index rows,
                                   Eigen::Index cols) {
      if (!tensors.contains(name)) throw ValidationError("checkpoint is missing tensor " + name);
      Eigen::MatrixXd m = decode_tensor(tensors.at(name));
      if (m.rows() != rows || m.cols() != cols) throw ValidationError("checkpoint tensor " + name + " has wrong shape");
      Eigen::Map<Eigen::MatrixXd>(buf.data(), rows, cols) = m;
    });
    ckpt.embedding = decode_tensor(tensors.at("embedding"));
    if (ckpt.embedding.cols() != ckpt.model.dim) throw ValidationError("embedding width does not match model dim");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, checkpoint_to_json(ckpt).dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

json attention_dump(const AttentionTensor& attention) {
  json layers = json::array();
  for (const auto& heads : attention) {
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(heads.front().rows(), heads.front().cols());
    for (const auto& a : heads) mean += a;
    mean /= static_cast<double>(heads.size());
    layers.push_back(encode_tensor(mean));
  }
  return {{"version", kCheckpointVersion}, {"layers", layers}};
}

}  // namespace spanflow::gnn
