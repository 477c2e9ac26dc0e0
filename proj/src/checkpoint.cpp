#include "wtbcp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "wtbcp/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wtbcp {

namespace {

constexpr char kMagic[8] = {'W', 'T', 'B', 'C', 'P', 'C', 'K', '1'};

void put_u64(std::string& out, uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

uint64_t get_u64(const char* p) {
  uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<uint64_t>(static_cast<uint8_t>(p[b])) << (8 * b);
  return v;
}

void append_tensor(std::string& payload, const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat32).contiguous();
  const float* data = c.data_ptr<float>();
  for (int64_t i = 0; i < c.numel(); ++i) {
    const auto word = std::bit_cast<uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) payload.push_back(static_cast<char>((word >> (8 * b)) & 0xFF));
  }
}

torch::Tensor read_tensor(const char* bytes, const std::vector<int64_t>& shape) {
  auto t = torch::empty(shape, torch::kFloat32);
  float* data = t.data_ptr<float>();
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t word = 0;
    for (int b = 0; b < 4; ++b) word |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[i * 4 + b])) << (8 * b);
    data[i] = std::bit_cast<float>(word);
  }
  return t;
}

}  // namespace

std::string_view to_string(TrainingPhase phase) { return phase == TrainingPhase::ssl ? "ssl" : "pretrain"; }

TrainingPhase parse_training_phase(std::string_view text) {
  if (text == "pretrain") return TrainingPhase::pretrain;
  if (text == "ssl") return TrainingPhase::ssl;
  throw FormatError("unknown training phase '" + std::string(text) + "'");
}

std::string Checkpoint::config_hash() const { return json_digest(json(model)); }

void Checkpoint::validate() const {
  std::set<std::string> s, t;
  for (const auto& [k, v] : student) s.insert(k);
  for (const auto& [k, v] : teacher) t.insert(k);
  if (s != t) throw ContractError("checkpoint teacher and student parameter names differ");
  for (const auto& [k, v] : student) {
    if (v.sizes() != teacher.at(k).sizes()) throw ContractError("teacher/student shape mismatch for '" + k + "'");
  }
  for (const auto& [k, v] : momentum) {
    if (!student.count(k)) throw ContractError("momentum buffer '" + k + "' has no matching parameter");
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  checkpoint.validate();
  std::string payload;
  json index = json::array();
  auto add_group = [&](const std::string& group, const TensorMap& tensors) {
    for (const auto& [name, tensor] : tensors) {
      const auto offset = payload.size();
      append_tensor(payload, tensor);
      index.push_back({{"name", group + "/" + name},
                       {"shape", tensor.sizes().vec()},
                       {"dtype", "float32"},
                       {"offset", offset},
                       {"nbytes", payload.size() - offset}});
    }
  };
  add_group("student", checkpoint.student);
  add_group("teacher", checkpoint.teacher);
  add_group("momentum", checkpoint.momentum);

  const json header = {{"format", "wtbcp-checkpoint"},
                       {"version", 1},
                       {"model", checkpoint.model},
                       {"train", checkpoint.train},
                       {"config_hash", checkpoint.config_hash()},
                       {"phase", to_string(checkpoint.phase)},
                       {"iteration", checkpoint.iteration},
                       {"metric_history", checkpoint.metric_history},
                       {"tensors", index}};
  const std::string header_text = header.dump();
  std::string prefix(kMagic, sizeof(kMagic));
  put_u64(prefix, header_text.size());

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + " is not a wtbcp checkpoint");
  }
  const uint64_t header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw FormatError("checkpoint header truncated");
  const size_t payload_start = 16 + header_len;
  Checkpoint ck;
  try {
    const json header = json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
    ck.model = header.at("model").get<ModelConfig>();
    ck.train = header.at("train").get<TrainConfig>();
    ck.phase = parse_training_phase(header.at("phase").get<std::string>());
    ck.iteration = header.at("iteration").get<int64_t>();
    ck.metric_history = header.at("metric_history");
    if (header.at("config_hash").get<std::string>() != ck.config_hash()) {
      throw FormatError("checkpoint config hash does not match its model config");
    }
    for (const auto& entry : header.at("tensors")) {
      const auto full = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<size_t>();
      const auto nbytes = entry.at("nbytes").get<size_t>();
      int64_t numel = 1;
      for (auto d : shape) numel *= d;
      if (nbytes != static_cast<size_t>(numel) * 4 || payload_start + offset + nbytes > bytes.size()) {
        throw FormatError("checkpoint tensor '" + full + "' extends past the payload");
      }
      const auto slash = full.find('/');
      const std::string group = full.substr(0, slash);
      const std::string name = full.substr(slash + 1);
      auto tensor = read_tensor(bytes.data() + payload_start + offset, shape);
      if (group == "student") {
        ck.student.emplace(name, tensor);
      } else if (group == "teacher") {
        ck.teacher.emplace(name, tensor);
      } else if (group == "momentum") {
        ck.momentum.emplace(name, tensor);
      } else {
        throw FormatError("checkpoint tensor group '" + group + "' unknown");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint header: " + std::string(e.what()));
  }
  ck.validate();
  return ck;
}

TensorMap capture_state(const torch::nn::Module& model) {
  TensorMap out;
  for (const auto& [name, t] : model_state(model)) out.emplace(name, t.detach().clone());
  return out;
}

void restore_state(torch::nn::Module& model, const TensorMap& state) {
  const auto live = model_state(model);
  if (live.size() != state.size()) {
    throw ContractError("state has " + std::to_string(state.size()) + " tensors, model has " + std::to_string(live.size()));
  }
  torch::NoGradGuard no_grad;
  for (const auto& [name, t] : live) {
    auto it = state.find(name);
    if (it == state.end()) throw ContractError("state is missing tensor '" + name + "'");
    if (it->second.sizes() != t.sizes()) throw ContractError("state tensor '" + name + "' has the wrong shape");
    const_cast<torch::Tensor&>(t).copy_(it->second);
  }
}

}  // namespace wtbcp
