#include "palate/shapespace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace palate {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'M', '1'};

class Writer {
public:
  template <typename T>
  void put(T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw Error("model: truncated file");
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error("model: truncated file");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void ShapeSpaceModel::validate() const {
  const Index k = mean.size();
  const Index d = basis.cols();
  if (k == 0 || k % 3 != 0) throw Error("model: mean length must be a positive multiple of 3");
  if (basis.rows() != k) throw Error("model: basis row count mismatch");
  if (coeff_means.size() != d || variances.size() != d) throw Error("model: mode count mismatch");
  if (n_train < 2 || d > static_cast<Index>(n_train) - 1) throw Error("model: too many modes for n_train");
  if (!mean.allFinite() || !basis.allFinite() || !coeff_means.allFinite() || !variances.allFinite())
    throw Error("model: non-finite values");
  const Eigen::MatrixXd gram = basis.transpose() * basis;
  if (d > 0 && (gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() >= 1e-10)
    throw Error("model: basis is not orthonormal");
  for (Index i = 0; i < d; ++i) {
    if (variances[i] < 0.0) throw Error("model: negative variance");
    if (i > 0 && variances[i] > variances[i - 1]) throw Error("model: variances not sorted");
  }
  const Index nv = k / 3;
  if (faces.size() > 0 && (faces.minCoeff() < 0 || faces.maxCoeff() >= nv))
    throw Error("model: face index out of range");
  for (const auto& [name, idx] : landmark_indices) {
    if (landmark_slot(name) < 0) throw Error("model: unknown landmark " + name);
    if (idx < 0 || idx >= nv) throw Error("model: landmark index out of range");
  }
  if (covariance_divisor_tag > 1) throw Error("model: unknown covariance divisor tag");
}

ShapeSpaceModel train(const std::vector<Mesh>& meshes, double variance_keep) {
  if (meshes.size() < 2) throw Error("train: need at least 2 meshes");
  if (!(variance_keep > 0.0 && variance_keep <= 1.0)) throw Error("train: variance_keep must be in (0, 1]");
  const Mesh& first = meshes.front();
  for (const auto& m : meshes) {
    if (m.vertex_count() != first.vertex_count() || m.faces.cols() != first.faces.cols() ||
        m.faces != first.faces)
      throw Error("train: mismatched topologies");
  }

  const Index k = 3 * first.vertex_count();
  const Index n = static_cast<Index>(meshes.size());
  Eigen::MatrixXd data(k, n);
  for (Index i = 0; i < n; ++i) data.col(i) = shape_vector(meshes[i].vertices);

  ShapeSpaceModel model;
  // Sequential sum keeps the mean reproducible element by element.
  model.mean = Eigen::VectorXd::Zero(k);
  for (Index i = 0; i < n; ++i) model.mean += data.col(i);
  model.mean /= static_cast<double>(n);
  const Eigen::MatrixXd centered = data.colwise() - model.mean;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
  const Eigen::VectorXd sigma = svd.singularValues();
  if (sigma.size() == 0 || !(sigma[0] > 0.0)) throw Error("train: zero variance, nothing to train");

  // Centered data has rank <= n - 1; the trailing singular value is rounding noise.
  Index usable = 0;
  while (usable < sigma.size() && usable < n - 1 && sigma[usable] > sigma[0] * 1e-10) ++usable;

  const double divisor = static_cast<double>(n - 1);
  const Eigen::VectorXd lambda = sigma.head(usable).array().square() / divisor;
  const double total = lambda.sum();
  Index d = 0;
  double cumulative = 0.0;
  while (d < usable) {
    cumulative += lambda[d];
    ++d;
    if (cumulative >= variance_keep * total) break;
  }

  model.basis = svd.matrixU().leftCols(d);
  for (Index i = 0; i < d; ++i) {
    Index arg = 0;
    model.basis.col(i).cwiseAbs().maxCoeff(&arg);
    if (model.basis(arg, i) < 0.0) model.basis.col(i) *= -1.0;
  }
  model.variances = lambda.head(d);
  // Training coefficients are projections about the sample mean, so their
  // mean is zero; stored explicitly for the file format.
  model.coeff_means = Eigen::VectorXd::Zero(d);
  model.faces = first.faces;
  model.landmark_indices = first.landmark_indices;
  model.n_train = static_cast<std::uint32_t>(n);
  model.covariance_divisor_tag = 1;
  model.validate();
  return model;
}

Eigen::VectorXd generate_vector(const ShapeSpaceModel& model, const CoefficientVector& c) {
  if (c.size() != model.modes()) throw Error("generate: coefficient length mismatch");
  Eigen::VectorXd x = model.mean;
  x.noalias() += model.basis * (model.coeff_means + c);
  return x;
}

Mesh generate(const ShapeSpaceModel& model, const CoefficientVector& c) {
  Mesh mesh;
  mesh.vertices = shape_vertices(generate_vector(model, c));
  mesh.faces = model.faces;
  mesh.landmark_indices = model.landmark_indices;
  return mesh;
}

CoefficientVector project(const ShapeSpaceModel& model, const Eigen::VectorXd& shape) {
  if (shape.size() != model.dimension()) throw Error("project: topology mismatch");
  return model.basis.transpose() * (shape - model.mean) - model.coeff_means;
}

CoefficientVector project(const ShapeSpaceModel& model, const Mesh& mesh) {
  if (3 * mesh.vertex_count() != model.dimension() || mesh.faces.cols() != model.faces.cols() ||
      mesh.faces != model.faces)
    throw Error("project: topology mismatch");
  return project(model, shape_vector(mesh.vertices));
}

double log_density(const ShapeSpaceModel& model, const CoefficientVector& c) {
  if (c.size() != model.modes()) throw Error("log_density: coefficient length mismatch");
  double value = 0.0;
  for (Index i = 0; i < c.size(); ++i) {
    const double lambda = model.variances[i];
    if (!(lambda > 0.0)) throw Error("log_density: zero variance component retained");
    value += c[i] * c[i] / lambda + std::log(2.0 * std::numbers::pi * lambda);
  }
  return -0.5 * value;
}

std::vector<std::uint8_t> serialize_model(const ShapeSpaceModel& model) {
  model.validate();
  if (model.landmark_indices.size() != kLandmarkCount)
    throw Error("model: all 7 landmark indices are required");
  Writer w;
  for (char ch : kMagic) w.put(static_cast<std::uint8_t>(ch));
  w.put(static_cast<std::uint32_t>(model.dimension()));
  w.put(static_cast<std::uint32_t>(model.modes()));
  w.put(model.n_train);
  w.put(static_cast<std::uint32_t>(model.faces.cols()));
  for (Index i = 0; i < model.mean.size(); ++i) w.put(model.mean[i]);
  for (Index c = 0; c < model.basis.cols(); ++c)
    for (Index r = 0; r < model.basis.rows(); ++r) w.put(model.basis(r, c));
  for (Index i = 0; i < model.coeff_means.size(); ++i) w.put(model.coeff_means[i]);
  for (Index i = 0; i < model.variances.size(); ++i) w.put(model.variances[i]);
  for (Index f = 0; f < model.faces.cols(); ++f)
    for (int c = 0; c < 3; ++c) w.put(static_cast<std::uint32_t>(model.faces(c, f)));
  for (const auto name : kLandmarkNames) {
    const auto it = model.landmark_indices.find(std::string(name));
    if (it == model.landmark_indices.end()) throw Error("model: missing landmark " + std::string(name));
    w.put(static_cast<std::uint32_t>(name.size()));
    for (char ch : name) w.put(static_cast<std::uint8_t>(ch));
    w.put(static_cast<std::uint32_t>(it->second));
  }
  w.put(model.covariance_divisor_tag);
  return std::move(w.out);
}

ShapeSpaceModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  for (char ch : kMagic)
    if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(ch)) throw Error("model: magic mismatch");
  const auto k = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  ShapeSpaceModel model;
  model.n_train = r.get<std::uint32_t>();
  const auto face_count = r.get<std::uint32_t>();
  // Reject sizes that cannot fit in the remaining bytes before allocating.
  const std::uint64_t needed = 8ull * (k + std::uint64_t(k) * d + 2ull * d) + 12ull * face_count;
  if (needed > r.remaining()) throw Error("model: truncated file");

  model.mean.resize(k);
  for (std::uint32_t i = 0; i < k; ++i) model.mean[i] = r.get<double>();
  model.basis.resize(k, d);
  for (std::uint32_t c = 0; c < d; ++c)
    for (std::uint32_t row = 0; row < k; ++row) model.basis(row, c) = r.get<double>();
  model.coeff_means.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) model.coeff_means[i] = r.get<double>();
  model.variances.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) model.variances[i] = r.get<double>();
  model.faces.resize(3, face_count);
  for (std::uint32_t f = 0; f < face_count; ++f)
    for (int c = 0; c < 3; ++c) model.faces(c, f) = static_cast<int>(r.get<std::uint32_t>());
  for (int i = 0; i < kLandmarkCount; ++i) {
    const auto len = r.get<std::uint32_t>();
    if (len > 64) throw Error("model: landmark name too long");
    const std::string name = r.get_string(len);
    const auto idx = r.get<std::uint32_t>();
    if (landmark_slot(name) < 0) throw Error("model: unknown landmark " + name);
    if (model.landmark_indices.count(name)) throw Error("model: duplicate landmark " + name);
    model.landmark_indices[name] = static_cast<int>(idx);
  }
  model.covariance_divisor_tag = r.get<std::uint8_t>();
  if (r.remaining() != 0) throw Error("model: trailing bytes");
  model.validate();
  return model;
}

void save_model(const ShapeSpaceModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("model: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ShapeSpaceModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("model: not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace palate
