#ifndef SMALR_TESTS_FIXTURES_HPP_
#define SMALR_TESTS_FIXTURES_HPP_

#include "smalr/pipeline.hpp"

namespace smalr::testing {

inline RunConfig tiny_run(std::uint64_t seed = 5) {
  RunConfig c;
  c.seed = seed;
  c.data.num_images = 40;
  c.data.concepts = 12;
  c.data.vocab_per_lang = 30;
  c.data.feature_dim = 8;
  c.data.concept_dim = 4;
  c.data.pretrained_dim = 6;
  c.reduced_dim = 4;
  c.k = 5;
  c.pretrain.latent_size = 16;
  c.pretrain.epochs = 2;
  c.pretrain.batch_size = 4;
  c.dims.universal_dim = 6;
  c.dims.joint_dim = 5;
  c.dims.adversary_hidden = 4;
  c.train.epochs = 2;
  c.train.batch_size = 4;
  c.seed_stages();
  return c;
}

struct TinyWorld {
  RunConfig config;
  Dataset data;
  WordVectors reduced;
  PretrainResult pretrain;
};

inline TinyWorld tiny_world(std::uint64_t seed = 5) {
  TinyWorld w;
  w.config = tiny_run(seed);
  w.data = generate_dataset(w.config);
  w.reduced = reduced_vectors(w.config, w.data);
  w.pretrain = run_pretrain(w.config, w.data, w.reduced);
  return w;
}

inline SmalrModel tiny_model(const TinyWorld& w) { return build_hem_model(w.config, w.data, w.reduced, w.pretrain); }

}  // namespace smalr::testing

#endif  // SMALR_TESTS_FIXTURES_HPP_
