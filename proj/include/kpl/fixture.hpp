#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kpl/numerics.hpp"
#include "kpl/retrieval.hpp"

// Synthetic zero-shot datasets with a controllable modality gap.
//
// Images are unit-normalized samples of spherical Gaussian clusters around
// unit class centers normalize(cone * c + r_j), with c shared and r_j random. Text-side vectors are the class centers rotated
// by `angle_degrees` inside every plane of a random orthogonal plane
// decomposition, shifted by a shared offset vector, perturbed by Gaussian
// noise and normalized. Each class gets `descriptions_per_class` such
// description embeddings plus one class-name embedding drawn the same way.
namespace kpl::fixture {

struct FixtureSpec {
  std::size_t num_images = 300;
  std::size_t num_classes = 5;
  std::size_t dim = 32;
  // Weight of the direction shared by all class centers; larger values squeeze
  // the image clusters into a narrow cone.
  double cone = 3.0;
  // Scale of the class center relative to the unit-norm cluster noise.
  double separation = 2.0;
  double angle_degrees = 25.0;
  double offset = 0.3;
  // Per-coordinate standard deviation of the text-side noise.
  double noise = 0.05;
  std::size_t descriptions_per_class = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Fixture {
  FixtureSpec spec;
  Matrix images;                    // N x d
  std::vector<std::size_t> labels;  // gold class per image
  retrieval::KnowledgeBase kb;
  Matrix names;  // K x d class-name embeddings
  Matrix centers;  // K x d image-side class centers
};

Fixture generate(const FixtureSpec& spec);

struct FixtureFiles {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path kb;
  std::filesystem::path names;
  std::filesystem::path manifest;
};

/// Writes images.emb, labels.txt, kb.json, names.emb and manifest.json.
FixtureFiles write(const Fixture& fixture, const std::filesystem::path& dir);

std::string manifest_json(const FixtureSpec& spec);

}  // namespace kpl::fixture
