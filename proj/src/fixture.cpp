#include "kpl/fixture.hpp"

#include <cmath>
#include <numbers>

#include "json.hpp"
#include "kpl/error.hpp"
#include "kpl/io.hpp"
#include "kpl/random.hpp"

namespace kpl::fixture {

namespace {

Vector gaussian(Rng& rng, std::size_t d, double scale = 1.0) {
  Vector v(d);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

void normalize(std::span<double> v) {
  const double n = norm(v);
  for (double& x : v) x /= n;
}

// Random orthonormal basis, one vector per row (Gram-Schmidt on Gaussian rows).
Matrix random_basis(Rng& rng, std::size_t d) {
  Matrix q(d, d);
  for (std::size_t r = 0; r < d; ++r) {
    auto row = q.row(r);
    while (true) {
      const Vector g = gaussian(rng, d);
      std::copy(g.begin(), g.end(), row.begin());
      for (std::size_t p = 0; p < r; ++p) {
        const double c = dot(row, q.row(p));
        const auto prev = q.row(p);
        for (std::size_t t = 0; t < d; ++t) row[t] -= c * prev[t];
      }
      if (norm(row) > 1e-8) break;
    }
    normalize(row);
  }
  return q;
}

// Rotates by `angle` inside each plane spanned by consecutive basis rows.
Vector rotate(const Matrix& basis, double angle, std::span<const double> x) {
  Vector y(x.begin(), x.end());
  const double c = std::cos(angle) - 1.0;
  const double s = std::sin(angle);
  for (std::size_t p = 0; p + 1 < basis.rows(); p += 2) {
    const auto u = basis.row(p);
    const auto v = basis.row(p + 1);
    const double a = dot(x, u);
    const double b = dot(x, v);
    for (std::size_t t = 0; t < y.size(); ++t) {
      y[t] += c * (a * u[t] + b * v[t]) + s * (a * v[t] - b * u[t]);
    }
  }
  return y;
}

Vector text_sample(Rng& rng, std::span<const double> center, double noise) {
  Vector e(center.begin(), center.end());
  for (double& x : e) x += noise * rng.normal();
  normalize(e);
  return e;
}

}  // namespace

void FixtureSpec::validate() const {
  if (num_images < 1) raise<UsageError>("fixture needs at least one image");
  if (num_classes < 2) raise<UsageError>("fixture needs at least two classes");
  if (dim < 2) raise<UsageError>("fixture dimension must be at least 2");
  if (descriptions_per_class < 1) raise<UsageError>("fixture needs at least one description per class");
  if (!(cone >= 0.0) || !std::isfinite(cone)) raise<UsageError>("cone must be nonnegative, got ", cone);
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    raise<UsageError>("separation must be nonnegative, got ", separation);
  }
  if (!(angle_degrees >= 0.0 && angle_degrees <= 180.0)) {
    raise<UsageError>("angle must lie in [0, 180] degrees, got ", angle_degrees);
  }
  if (!(offset >= 0.0) || !std::isfinite(offset)) {
    raise<UsageError>("offset must be nonnegative, got ", offset);
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    raise<UsageError>("noise must be nonnegative, got ", noise);
  }
}

Fixture generate(const FixtureSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t d = spec.dim;
  const std::size_t k = spec.num_classes;

  Vector common = gaussian(rng, d);
  normalize(common);
  Matrix centers(k, d);
  for (std::size_t j = 0; j < k; ++j) {
    auto row = centers.row(j);
    Vector g = gaussian(rng, d);
    normalize(g);
    for (std::size_t c = 0; c < d; ++c) row[c] = spec.cone * common[c] + g[c];
    normalize(row);
  }

  const Matrix basis = random_basis(rng, d);
  const double angle = spec.angle_degrees * std::numbers::pi / 180.0;
  Vector shift = gaussian(rng, d);
  normalize(shift);

  Matrix text_centers(k, d);
  for (std::size_t j = 0; j < k; ++j) {
    const Vector t = rotate(basis, angle, centers.row(j));
    auto row = text_centers.row(j);
    for (std::size_t c = 0; c < d; ++c) row[c] = t[c] + spec.offset * shift[c];
  }

  std::vector<retrieval::ClassRecord> classes(k);
  Matrix names(k, d);
  for (std::size_t j = 0; j < k; ++j) {
    auto& rec = classes[j];
    rec.name = "class_" + std::to_string(j);
    rec.embeddings = Matrix(spec.descriptions_per_class, d);
    for (std::size_t l = 0; l < spec.descriptions_per_class; ++l) {
      rec.descriptions.push_back(rec.name + " visual description " + std::to_string(l));
      const Vector e = text_sample(rng, text_centers.row(j), spec.noise);
      std::copy(e.begin(), e.end(), rec.embeddings.row(l).begin());
    }
    const Vector nm = text_sample(rng, text_centers.row(j), spec.noise);
    std::copy(nm.begin(), nm.end(), names.row(j).begin());
  }

  Fixture fx;
  fx.spec = spec;
  fx.images = Matrix(spec.num_images, d);
  fx.labels.resize(spec.num_images);
  const double spread = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < spec.num_images; ++i) {
    const std::size_t j = i % k;
    fx.labels[i] = j;
    auto row = fx.images.row(i);
    const auto c = centers.row(j);
    for (std::size_t t = 0; t < d; ++t) row[t] = spec.separation * c[t] + spread * rng.normal();
    normalize(row);
  }
  fx.kb = retrieval::KnowledgeBase(std::move(classes));
  fx.names = std::move(names);
  fx.centers = std::move(centers);
  return fx;
}

std::string manifest_json(const FixtureSpec& spec) {
  nlohmann::ordered_json doc;
  doc["generator"] = "kpl gen-fixture";
  doc["seed"] = spec.seed;
  doc["num_images"] = spec.num_images;
  doc["num_classes"] = spec.num_classes;
  doc["dim"] = spec.dim;
  doc["cone"] = spec.cone;
  doc["separation"] = spec.separation;
  doc["angle_degrees"] = spec.angle_degrees;
  doc["offset"] = spec.offset;
  doc["noise"] = spec.noise;
  doc["descriptions_per_class"] = spec.descriptions_per_class;
  doc["files"] = {{"images", "images.emb"},
                  {"labels", "labels.txt"},
                  {"kb", "kb.json"},
                  {"names", "names.emb"}};
  return doc.dump(2) + "\n";
}

FixtureFiles write(const Fixture& fixture, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise<DataError>("cannot create directory '", dir.string(), "': ", ec.message());

  FixtureFiles files{dir / "images.emb", dir / "labels.txt", dir / "kb.json", dir / "names.emb",
                     dir / "manifest.json"};
  io::write_embeddings(files.images, fixture.images);
  io::write_embeddings(files.names, fixture.names);
  io::write_text(files.kb, io::knowledge_base_to_json(fixture.kb));
  std::string labels;
  for (std::size_t y : fixture.labels) labels += fixture.kb[y].name + "\n";
  io::write_text(files.labels, labels);
  io::write_text(files.manifest, manifest_json(fixture.spec));
  return files;
}

}  // namespace kpl::fixture
