#include "ssda/checkpoint.hpp"

#include "ssda/errors.hpp"

#include <fstream>

namespace ssda {

namespace {

using nlohmann::json;

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

Matrix unflat(const json& j, Index rows, Index cols, const char* what) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<Index>(values.size()) != rows * cols) {
    throw ConfigError(std::string("checkpoint ") + what + " holds " +
                      std::to_string(values.size()) + " values, expected " +
                      std::to_string(rows * cols));
  }
  return Eigen::Map<const Matrix>(values.data(), rows, cols);
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

json read_json(const std::filesystem::path& path, std::string_view kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) {
    throw ConfigError(path.string() + " is not an ssda checkpoint");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version in " + path.string());
  }
  if (j.value("kind", "") != kind) {
    throw ConfigError("checkpoint " + path.string() + " holds a '" + j.value("kind", "") +
                      "', expected '" + std::string(kind) + "'");
  }
  return j;
}

json header(std::string_view kind, std::string_view config_hash) {
  return json{{"format", kCheckpointFormat},
              {"version", kCheckpointVersion},
              {"kind", kind},
              {"config_hash", config_hash}};
}

}  // namespace

json layers_to_json(std::span<const DenseLayer> layers) {
  json out = json::array();
  for (const auto& l : layers) {
    out.push_back(json{{"in", l.in_dim()},
                       {"out", l.out_dim()},
                       {"activation", to_string(l.activation)},
                       {"trainable", l.trainable},
                       {"weights", flat(l.weights.value())},
                       {"bias", flat(l.bias.value())}});
  }
  return out;
}

std::vector<DenseLayer> layers_from_json(const json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& lj : j) {
    const Index in = lj.at("in").get<Index>();
    const Index out = lj.at("out").get<Index>();
    if (in <= 0 || out <= 0) throw ConfigError("checkpoint layer has non-positive width");
    DenseLayer l;
    l.weights = Tensor(unflat(lj.at("weights"), in, out, "weights"), true);
    l.bias = Tensor(unflat(lj.at("bias"), 1, out, "bias"), true);
    l.activation = activation_from_string(lj.at("activation").get<std::string>());
    l.trainable = lj.value("trainable", true);
    layers.push_back(std::move(l));
  }
  return layers;
}

void save_autoencoder(const std::filesystem::path& path, const AutoEncoder& ae,
                      std::string_view config_hash) {
  json j = header("autoencoder", config_hash);
  j["encoder"] = layers_to_json(ae.encoder);
  j["decoder"] = layers_to_json(ae.decoder);
  write_json(path, j);
}

Checkpoint<AutoEncoder> load_autoencoder(const std::filesystem::path& path) {
  const json j = read_json(path, "autoencoder");
  Checkpoint<AutoEncoder> out;
  out.model.encoder = layers_from_json(j.at("encoder"));
  out.model.decoder = layers_from_json(j.at("decoder"));
  out.model.validate();
  out.config_hash = j.value("config_hash", "");
  return out;
}

void save_classifier(const std::filesystem::path& path, const Classifier& clf,
                     std::string_view config_hash) {
  json j = header("classifier", config_hash);
  j["layers"] = layers_to_json(clf.layers);
  write_json(path, j);
}

Checkpoint<Classifier> load_classifier(const std::filesystem::path& path) {
  const json j = read_json(path, "classifier");
  Checkpoint<Classifier> out;
  out.model.layers = layers_from_json(j.at("layers"));
  out.model.validate();
  out.config_hash = j.value("config_hash", "");
  return out;
}

void save_target_model(const std::filesystem::path& path, const TargetModel& model,
                       std::string_view config_hash) {
  json j = header("target_model", config_hash);
  j["encoder"] = layers_to_json(model.encoder);
  j["classifier"] = layers_to_json(model.classifier.layers);
  write_json(path, j);
}

Checkpoint<TargetModel> load_target_model(const std::filesystem::path& path) {
  const json j = read_json(path, "target_model");
  Checkpoint<TargetModel> out;
  out.model.encoder = layers_from_json(j.at("encoder"));
  out.model.classifier.layers = layers_from_json(j.at("classifier"));
  out.model.classifier.validate();
  out.config_hash = j.value("config_hash", "");
  return out;
}

}  // namespace ssda
