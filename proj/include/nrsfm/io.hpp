#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nrsfm/error.hpp"
#include "nrsfm/regressor.hpp"
#include "nrsfm/synthetic.hpp"
#include "nrsfm/types.hpp"

namespace nrsfm::io {

enum class IoErrorKind { Open, Parse, Checksum, Version, Truncated, Schema };

const char* to_string(IoErrorKind kind);

class IoError : public Error {
 public:
  IoError(IoErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  IoErrorKind kind() const noexcept { return kind_; }

 private:
  IoErrorKind kind_;
};

inline constexpr std::uint32_t kLandmarkVersion = 1;
inline constexpr std::uint32_t kModelVersion = 1;

/// Text landmark file: a header of `key value` lines, then one
/// `frame point x y` row per landmark.
struct LandmarkFile {
  Index L = 0;
  bool normalized = true;  // every coordinate within [0, 1]
  std::uint64_t seed = 0;  // provenance only
  std::vector<Shape2D> shapes;

  Index N() const { return static_cast<Index>(shapes.size()); }
};

/// Optional per-frame ground truth written next to synthetic landmarks.
struct TruthSidecar {
  std::vector<AttributeVector> q_true;
  std::vector<Eigen::VectorXd> nuisance;
};

struct ModelFile {
  BasisSet basis;
  std::optional<MlpRegressor> regressor;
};

/// Writes go to a temporary sibling and are renamed into place.
void write_landmarks(const std::filesystem::path& path, const LandmarkFile& file);
LandmarkFile read_landmarks(const std::filesystem::path& path);

void write_truth(const std::filesystem::path& path, const TruthSidecar& truth);
TruthSidecar read_truth(const std::filesystem::path& path);

/// One latent vector per row.
void write_latents(const std::filesystem::path& path, const std::vector<Eigen::VectorXd>& latents);
std::vector<Eigen::VectorXd> read_latents(const std::filesystem::path& path);

/// Binary: magic, version, payload size, payload, CRC-32 of the payload.
void write_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile read_model(const std::filesystem::path& path);
std::string serialize_model(const ModelFile& model);
ModelFile deserialize_model(const std::string& bytes);

/// Synthetic world configuration as a flat key = value file.
void write_world_config(const std::filesystem::path& path, const WorldConfig& cfg);
WorldConfig read_world_config(const std::filesystem::path& path);

/// A latent vector as JSON: either a bare array or an object with a "w" array.
Eigen::VectorXd read_latent_json(const std::filesystem::path& path);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace nrsfm::io
