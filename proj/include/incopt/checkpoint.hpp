#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "incopt/errors.hpp"
#include "incopt/trainer.hpp"
#include "incopt/version.hpp"

namespace incopt {

// Checkpoint container layout:
//   bytes 0..7   magic "INCOPT01"
//   bytes 8..15  u64 little-endian JSON header length
//   ...          JSON header (configs, transform stats, tensor manifest)
//   ...          tensor payload: raw little-endian f64, params blocks then
//                ADAM m then ADAM v, in ModelParams::blocks() order
// The file size must match the manifest exactly; anything else is corrupt.

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void append_doubles_le(std::string& out, const std::vector<double>& v) {
  for (double d : v) put_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

inline nlohmann::json model_config_json(const ModelConfig& m) {
  return nlohmann::json{{"kind", to_string(m.kind)},
                        {"depth", m.depth},
                        {"width", m.width},
                        {"input_dim", m.input_dim},
                        {"edge_dim", m.edge_dim},
                        {"fanouts", m.fanouts},
                        {"aggregator", to_string(m.aggregator)},
                        {"activation", to_string(m.activation)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  const std::string kind = j.at("kind");
  if (kind == "ge") m.kind = ModelKind::Ge;
  else if (kind == "mlp") m.kind = ModelKind::Mlp;
  else if (kind == "linear") m.kind = ModelKind::Linear;
  else raise(ErrorKind::CorruptFile, "unknown model kind '" + kind + "'");
  m.depth = j.at("depth");
  m.width = j.at("width");
  m.input_dim = j.at("input_dim");
  m.edge_dim = j.at("edge_dim");
  m.fanouts = j.at("fanouts").get<std::vector<int>>();
  const std::string agg = j.at("aggregator");
  m.aggregator = agg == "attention" ? Aggregator::Attention : Aggregator::Mean;
  const std::string act = j.at("activation");
  if (act == "relu") m.activation = Activation::Relu;
  else if (act == "tanh") m.activation = Activation::Tanh;
  else m.activation = Activation::Identity;
  return m;
}

inline nlohmann::json train_config_json(const TrainConfig& t) {
  return nlohmann::json{{"learning_rate", t.learning_rate},
                        {"beta1", t.beta1},
                        {"beta2", t.beta2},
                        {"eps", t.eps},
                        {"batch_size", t.batch_size},
                        {"epochs", t.epochs},
                        {"lr_decay", t.lr_decay},
                        {"label_transform", to_string(t.label_transform)},
                        {"train_fraction", t.train_fraction},
                        {"patience", t.patience},
                        {"seed", t.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.learning_rate = j.at("learning_rate");
  t.beta1 = j.at("beta1");
  t.beta2 = j.at("beta2");
  t.eps = j.at("eps");
  t.batch_size = j.at("batch_size");
  t.epochs = j.at("epochs");
  t.lr_decay = j.at("lr_decay");
  const std::string lt = j.at("label_transform");
  t.label_transform = lt == "none" ? LabelTransform::None : LabelTransform::Log1pZscore;
  t.train_fraction = j.at("train_fraction");
  t.patience = j.at("patience");
  t.seed = j.at("seed");
  return t;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = ckpt.format_version;
  header["model"] = detail::model_config_json(ckpt.model);
  header["train"] = detail::train_config_json(ckpt.train);
  header["transform"] = {{"kind", to_string(ckpt.transform.kind)},
                         {"mu", ckpt.transform.mu},
                         {"sigma", ckpt.transform.sigma}};
  header["adam_step"] = ckpt.adam.step;
  header["config_hash"] = ckpt.config_hash;
  header["best_epoch"] = ckpt.best_epoch;
  header["best_val_mae"] = ckpt.best_val_mae;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& blk : ckpt.params.blocks()) {
    manifest.push_back({{"name", blk.name}, {"rows", blk.rows}, {"cols", blk.cols}});
  }
  header["tensors"] = manifest;

  std::string body;
  body += kCheckpointMagic;
  const std::string header_text = header.dump();
  detail::put_u64_le(body, header_text.size());
  body += header_text;
  for (const auto& blk : ckpt.params.blocks()) detail::append_doubles_le(body, *blk.data);
  for (const auto& blk : ckpt.adam.m.blocks()) detail::append_doubles_le(body, *blk.data);
  for (const auto& blk : ckpt.adam.v.blocks()) detail::append_doubles_le(body, *blk.data);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::IoError, "cannot write " + path.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.close();
  if (out.fail()) raise(ErrorKind::IoError, "write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  const std::string magic(kCheckpointMagic);
  if (bytes.size() < magic.size() + 8) {
    raise(ErrorKind::CorruptFile, path.string() + ": truncated header");
  }
  const std::string file_magic(reinterpret_cast<const char*>(bytes.data()), magic.size());
  if (file_magic != magic) {
    if (file_magic.rfind("INCOPT", 0) == 0) {
      raise(ErrorKind::VersionMismatch,
            path.string() + ": checkpoint format '" + file_magic + "', expected '" + magic + "'");
    }
    raise(ErrorKind::CorruptFile, path.string() + ": not a checkpoint file");
  }

  const std::uint64_t header_len = detail::get_u64_le(bytes.data() + magic.size());
  const std::size_t header_start = magic.size() + 8;
  if (bytes.size() < header_start + header_len) {
    raise(ErrorKind::CorruptFile, path.string() + ": truncated metadata");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + header_start,
                                   bytes.begin() + header_start + header_len);
  } catch (const nlohmann::json::exception&) {
    raise(ErrorKind::CorruptFile, path.string() + ": bad metadata block");
  }

  Checkpoint ckpt;
  try {
    ckpt.format_version = header.at("format_version");
    if (ckpt.format_version != kCheckpointFormatVersion) {
      raise(ErrorKind::VersionMismatch,
            path.string() + ": format_version " + std::to_string(ckpt.format_version) +
                ", expected " + std::to_string(kCheckpointFormatVersion));
    }
    ckpt.model = detail::model_config_from_json(header.at("model"));
    ckpt.train = detail::train_config_from_json(header.at("train"));
    const auto& tj = header.at("transform");
    const std::string tk = tj.at("kind");
    ckpt.transform.kind = tk == "none" ? LabelTransform::None : LabelTransform::Log1pZscore;
    ckpt.transform.mu = tj.at("mu");
    ckpt.transform.sigma = tj.at("sigma");
    ckpt.config_hash = header.at("config_hash");
    ckpt.best_epoch = header.at("best_epoch");
    ckpt.best_val_mae = header.at("best_val_mae");
    ckpt.adam.step = header.at("adam_step");
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    raise(ErrorKind::CorruptFile, path.string() + ": incomplete metadata");
  }

  ckpt.params = make_zero_params(ckpt.model);
  ckpt.adam.m = make_zero_params(ckpt.model);
  ckpt.adam.v = make_zero_params(ckpt.model);

  // Manifest must agree with the shapes implied by the config.
  auto blocks = ckpt.params.blocks();
  const auto& manifest = header.at("tensors");
  if (manifest.size() != blocks.size()) {
    raise(ErrorKind::CorruptFile, path.string() + ": tensor manifest does not match config");
  }
  std::size_t payload = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& mj = manifest[b];
    if (mj.at("name") != blocks[b].name || mj.at("rows") != blocks[b].rows ||
        mj.at("cols") != blocks[b].cols) {
      raise(ErrorKind::CorruptFile, path.string() + ": tensor manifest does not match config");
    }
    payload += blocks[b].data->size();
  }
  payload *= 3;  // params + adam m + adam v

  const std::size_t data_start = header_start + header_len;
  if (bytes.size() != data_start + payload * 8) {
    raise(ErrorKind::CorruptFile, path.string() + ": tensor payload size mismatch");
  }

  const unsigned char* p = bytes.data() + data_start;
  auto read_into = [&p](ModelParams& dst) {
    for (auto& blk : dst.blocks()) {
      for (double& d : *blk.data) {
        d = std::bit_cast<double>(detail::get_u64_le(p));
        p += 8;
      }
    }
  };
  read_into(ckpt.params);
  read_into(ckpt.adam.m);
  read_into(ckpt.adam.v);
  return ckpt;
}

}  // namespace incopt
