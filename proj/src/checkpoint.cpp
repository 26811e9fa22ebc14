#include "wmnet/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include "json.hpp"
#include "wmnet/error.hpp"

namespace wmnet {
namespace {

constexpr char kMagic[4] = {'W', 'M', 'C', 'K'};
constexpr std::uint32_t kMaxRank = 8;
const std::string kFirstMomentPrefix = "adam.m.";
const std::string kSecondMomentPrefix = "adam.v.";

using Json = nlohmann::ordered_json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) {
  out.insert(out.end(), s.begin(), s.end());
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  put_bytes(out, name);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, std::filesystem::path path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::Truncated,
                  path_.string() + ": checkpoint truncated while reading " + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

Error corrupt(const Reader& in, const std::string& what) {
  return Error(ErrorKind::Io, in.path().string() + ": corrupt checkpoint: " + what);
}

Json metrics_json(const EpochRecord& r) {
  const auto number = [](double v) -> Json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  return Json{{"epoch", r.epoch},         {"l1", number(r.loss.l1)}, {"l2", number(r.loss.l2)},
              {"l3", number(r.loss.l3)},  {"psnr", number(r.psnr)},  {"ber", number(r.ber)}};
}

double metric_from_json(const Json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::Io, "bad metric value '" + s + "'");
  }
  return j.get<double>();
}

Json config_json(const TrainingConfig& c) {
  Json attacks = Json::array();
  for (const auto& e : c.attacks.entries) {
    attacks.push_back({{"attack", std::string(e.spec.name())},
                       {"p", e.spec.probability},
                       {"sigma", e.spec.sigma},
                       {"quality", e.spec.quality},
                       {"weight", e.weight}});
  }
  return Json{{"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"learning_rate", c.learning_rate},
              {"seed", c.seed},
              {"attack_simulator", c.attack_simulator},
              {"attacks", attacks}};
}

TrainingConfig config_from_json(const Json& j, BandId band) {
  TrainingConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lambda1 = j.at("lambda1").get<double>();
  c.lambda2 = j.at("lambda2").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.attack_simulator = j.at("attack_simulator").get<bool>();
  c.attacks.entries.clear();
  for (const auto& a : j.at("attacks")) {
    const auto kind = parse_attack_kind(a.at("attack").get<std::string>());
    if (!kind) throw Error(ErrorKind::Io, "unknown attack in checkpoint header");
    AttackSpec spec;
    spec.kind = *kind;
    spec.probability = a.at("p").get<double>();
    spec.sigma = a.at("sigma").get<double>();
    spec.quality = a.at("quality").get<int>();
    c.attacks.entries.push_back({spec, a.at("weight").get<double>()});
  }
  c.band = band;
  return c;
}

}  // namespace

std::string checkpoint_header(const TrainState& state, const CheckpointMetadata& metadata) {
  Json j;
  j["format"] = "wmnet checkpoint";
  j["band"] = std::string(to_string(state.params.band));
  j["model_version"] = state.params.version;
  j["step"] = state.step;
  j["config"] = config_json(metadata.config);
  j["metrics"] = metadata.metrics ? metrics_json(*metadata.metrics) : Json(nullptr);
  if (!state.params.norms.empty()) {
    const BatchNormParams& bn = state.params.norms.begin()->second;
    j["batchnorm"] = {{"epsilon", bn.epsilon}, {"momentum", bn.momentum}};
  }
  return j.dump(2) + "\n";
}

void save_checkpoint(const TrainState& state, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  const std::string header = checkpoint_header(state, metadata);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  put_bytes(out, header);

  const auto tensors = state.params.all_tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size() + state.first_moment.size() +
                                          state.second_moment.size()));
  for (const auto& [name, t] : tensors) put_tensor(out, name, *t);
  for (const auto& [name, t] : state.first_moment) put_tensor(out, kFirstMomentPrefix + name, t);
  for (const auto& [name, t] : state.second_moment) put_tensor(out, kSecondMomentPrefix + name, t);

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorKind::Io, path.string() + ": cannot open for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorKind::Io, path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorKind::Io, path.string() + ": cannot open checkpoint");
  Reader in(std::vector<std::uint8_t>(std::istreambuf_iterator<char>(file), {}), path);

  const std::string magic = in.text(4, "magic");
  if (magic != std::string(kMagic, 4)) {
    throw Error(ErrorKind::BadMagic, path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::BadVersion, path.string() + ": unsupported checkpoint version " +
                                           std::to_string(version) + " (expected " +
                                           std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t header_bytes = in.u32("header length");
  const std::string header_text = in.text(header_bytes, "header");

  Checkpoint ck;
  try {
    const Json header = Json::parse(header_text);
    const auto band = parse_band(header.at("band").get<std::string>());
    if (!band) throw corrupt(in, "unknown band");
    ck.state.params = init_parameters(0, *band);
    ck.state.step = header.at("step").get<std::uint64_t>();
    ck.metadata.config = config_from_json(header.at("config"), *band);
    const Json& m = header.at("metrics");
    if (!m.is_null()) {
      EpochRecord r;
      r.epoch = m.at("epoch").get<std::size_t>();
      r.loss = {metric_from_json(m.at("l1")), metric_from_json(m.at("l2")),
                metric_from_json(m.at("l3"))};
      r.psnr = metric_from_json(m.at("psnr"));
      r.ber = metric_from_json(m.at("ber"));
      ck.metadata.metrics = r;
    }
    if (header.contains("batchnorm")) {
      for (auto& [name, bn] : ck.state.params.norms) {
        bn.epsilon = header["batchnorm"].at("epsilon").get<float>();
        bn.momentum = header["batchnorm"].at("momentum").get<float>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(in, std::string("header: ") + e.what());
  }

  const std::uint32_t count = in.u32("tensor count");
  std::size_t model_tensors = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.text(in.u32("tensor name length"), "tensor name");
    const std::uint32_t rank = in.u32("tensor rank");
    if (rank == 0 || rank > kMaxRank) throw corrupt(in, "tensor '" + name + "' has bad rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(in.u32("tensor shape"));

    Tensor* target = nullptr;
    Tensor scratch;
    if (name.starts_with(kFirstMomentPrefix)) {
      target = &ck.state.first_moment[name.substr(kFirstMomentPrefix.size())];
    } else if (name.starts_with(kSecondMomentPrefix)) {
      target = &ck.state.second_moment[name.substr(kSecondMomentPrefix.size())];
    } else {
      target = ck.state.params.find_tensor(name);
      if (!target) throw corrupt(in, "unknown tensor '" + name + "'");
      if (target->shape() != shape) {
        throw Error(ErrorKind::ShapeMismatch, path.string() + ": tensor '" + name + "' is " +
                                                  shape_to_string(shape) + ", model expects " +
                                                  shape_to_string(target->shape()));
      }
      ++model_tensors;
    }
    const std::size_t numel = shape_numel(shape);
    if (numel == 0) throw corrupt(in, "tensor '" + name + "' is empty");
    in.need(numel * 4, "tensor data");
    std::vector<float> data(numel);
    for (auto& v : data) v = std::bit_cast<float>(in.u32("tensor data"));
    *target = Tensor(shape, std::move(data));
  }
  if (model_tensors != ck.state.params.all_tensors().size()) {
    throw corrupt(in, "missing model tensors");
  }
  if (!in.at_end()) throw corrupt(in, "trailing bytes after tensor section");
  return ck;
}

}  // namespace wmnet
