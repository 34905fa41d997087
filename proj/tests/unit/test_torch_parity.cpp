#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mammo/checkpoint.hpp"
#include "mammo/models.hpp"

using namespace mammo;

namespace {

void check_close(const Tensor& got, const Tensor& want, double abs_tol, double rel_tol) {
  REQUIRE(got.shape == want.shape);
  for (std::size_t i = 0; i < got.numel(); ++i) {
    INFO("index " << i << " got " << got[i] << " want " << want[i]);
    CHECK(std::abs(got[i] - want[i]) <= abs_tol + rel_tol * std::abs(want[i]));
  }
}

}  // namespace

TEST_CASE("small residual network matches torch outputs and gradients", "[torch]") {
  const auto archive = load_tensor_archive(std::filesystem::path(MAMMO_ORACLE_DIR) / "tiny_resnet.mck");
  BackboneConfig cfg;
  cfg.base_width = 4;
  cfg.blocks = {1, 1};
  Model model(Backbone(cfg), HeadSpec::for_task(TaskSpec::make(TaskKind::MLMC)), 0);
  load_state(model, archive.tensors);

  const Tensor& x = archive.tensors.at("oracle.input");
  check_close(model.forward(x, Pass{}), archive.tensors.at("oracle.logits_eval"), 1e-5, 1e-4);

  model.zero_grad();
  const Tensor train_logits = model.forward(x, Pass{true, true});
  check_close(train_logits, archive.tensors.at("oracle.logits_train"), 1e-5, 1e-4);
  model.backward(archive.tensors.at("oracle.probe"));
  int compared = 0;
  for (const Parameter* p : model.parameters()) {
    if (!p->trainable) continue;
    INFO(p->name);
    check_close(p->grad, archive.tensors.at("oracle.grad." + p->name), 1e-5, 1e-3);
    ++compared;
  }
  CHECK(compared == 20);
}
