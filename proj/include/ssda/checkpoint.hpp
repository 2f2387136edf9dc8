#pragma once

// Versioned JSON model checkpoints. Parameters are stored as flat row-major
// arrays of doubles; the shortest round-trip decimal form makes reloading
// bit-exact.

#include "ssda/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssda {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointFormat = "ssda.checkpoint";

nlohmann::json layers_to_json(std::span<const DenseLayer> layers);
std::vector<DenseLayer> layers_from_json(const nlohmann::json& j);

template <typename Model>
struct Checkpoint {
  Model model;
  std::string config_hash;
};

void save_autoencoder(const std::filesystem::path& path, const AutoEncoder& ae,
                      std::string_view config_hash);
Checkpoint<AutoEncoder> load_autoencoder(const std::filesystem::path& path);

void save_classifier(const std::filesystem::path& path, const Classifier& clf,
                     std::string_view config_hash);
Checkpoint<Classifier> load_classifier(const std::filesystem::path& path);

void save_target_model(const std::filesystem::path& path, const TargetModel& model,
                       std::string_view config_hash);
Checkpoint<TargetModel> load_target_model(const std::filesystem::path& path);

}  // namespace ssda
