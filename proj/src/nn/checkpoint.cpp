#include "esigal/nn/checkpoint.hpp"

#include "esigal/container.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace esigal::nn {

namespace fs = std::filesystem;

template <typename Scalar>
void save_checkpoint(const fs::path& dir, Model<Scalar>& model, const nlohmann::json& extra) {
  fs::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  std::size_t i = 0;
  for (std::size_t l = 0; l < model.n_layers(); ++l)
    for (auto* p : model.layer(l).params()) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "param_%03zu", i++);
      MatrixMeta meta;
      meta.role = "checkpoint";
      meta.extra = {{"layer", model.spec().layers[l].name}, {"name", p->name}, {"trainable", p->trainable}};
      const Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
          p->value.data(), p->rows, p->cols);
      save_matrix(dir / stem, m, meta);
      params.push_back({{"file", stem}, {"layer", model.spec().layers[l].name}, {"name", p->name},
                        {"rows", p->rows}, {"cols", p->cols}});
    }
  nlohmann::json j = {{"model", to_json(model.spec())}, {"params", params}, {"extra", extra}};
  std::ofstream f(dir / "model.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "model.json").string());
  f << j.dump(2) << '\n';
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const fs::path& dir, nlohmann::json* extra) {
  std::ifstream f(dir / "model.json");
  if (!f) throw std::runtime_error("no checkpoint at " + dir.string());
  const auto j = nlohmann::json::parse(f);
  Model<Scalar> model(model_spec_from_json(j.at("model")));
  const auto& list = j.at("params");
  auto ps = model.params();
  if (list.size() != ps.size())
    throw std::runtime_error("checkpoint lists " + std::to_string(list.size()) + " tensors, model has " +
                             std::to_string(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto [m, meta] = load_matrix_f32(dir / list[i].at("file").get<std::string>());
    if (m.rows() != ps[i]->rows || m.cols() != ps[i]->cols || list[i].at("name") != ps[i]->name)
      throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " does not match " + ps[i]->name);
    for (Eigen::Index k = 0; k < m.size(); ++k) ps[i]->value[k] = static_cast<Scalar>(m.data()[k]);
  }
  if (extra) *extra = j.value("extra", nlohmann::json::object());
  return model;
}

template void save_checkpoint<float>(const fs::path&, Model<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const fs::path&, Model<double>&, const nlohmann::json&);
template Model<float> load_checkpoint<float>(const fs::path&, nlohmann::json*);
template Model<double> load_checkpoint<double>(const fs::path&, nlohmann::json*);

}  // namespace esigal::nn
