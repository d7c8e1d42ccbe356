// Trains a deviation network on the standard tabular set with ten labeled
// anomalies and prints the test AUC and a few interpretable scores.

#include <iostream>

#include "devnet/devnet.hpp"

int main() {
  using namespace devnet;

  const std::vector<Bag> data = gen_tabular(standard_tabular_config(7));
  SplitSpec spec;
  spec.seed = 7;
  const Split split = make_split(data, spec);

  TrainConfig cfg;
  cfg.seed = 7;
  cfg.epochs = 10;
  const TrainResult run = train(split.train_normal, split.train_anomaly, cfg);

  const std::vector<double> scores = score_bags(split.test, run.params, cfg.mil.k_fraction);
  std::cout << "test AUC-ROC: " << auc_roc(scores, labels_of(split.test)) << "\n";
  for (std::size_t i = 0; i < 5 && i < split.test.size(); ++i) {
    std::cout << split.test[i].id << " score " << scores[i] << " tail probability "
              << score_to_probability(scores[i], cfg.prior) << "\n";
  }
}
