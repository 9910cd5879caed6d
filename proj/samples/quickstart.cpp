/*
 *  Copyright 2026 The kernelmap Authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 */

// Trains a map on the synthetic two-bump task, reports held-out errors and
// writes a 200x200 contour grid with its raster.

#include "kmap/bench.hpp"
#include "kmap/contour.hpp"
#include "kmap/dataio.hpp"
#include "kmap/synthetic.hpp"
#include "kmap/trainer.hpp"

#include <iostream>

int main() {
  kmap::SyntheticSpec spec;
  spec.dim = 16;
  auto [train_set, test_set] = kmap::make_synthetic_split(spec, 2000, 500);

  kmap::TrainConfig cfg;
  cfg.epochs = 20;
  auto result = kmap::train<float>(train_set, cfg, [](std::size_t epoch, const kmap::EpochRecord& r) {
    std::cout << "epoch " << epoch << " loss " << r.loss.total << " alpha " << r.alpha << " beta " << r.beta << '\n';
  });
  auto model = std::make_shared<const kmap::ModelState<float>>(std::move(result.model));

  kmap::BenchOptions opt;
  const auto fit = kmap::fit_from_model(model, train_set);
  const auto report = kmap::evaluate_fit(fit, "akrmap", train_set, test_set, cfg.seed, opt);
  std::cout << kmap::report_to_json(report).dump(2) << '\n';

  const kmap::ContourMap map = kmap::build_contour_map(*model, train_set);
  const kmap::ContourGrid grid = map.grid({}, 200, 200);
  kmap::write_file("contour.json", kmap::grid_to_json(grid, map.score_min(), map.score_max()).dump());
  kmap::write_file("contour.ppm", kmap::grid_to_ppm(grid, map.score_min(), map.score_max()));
  std::cout << grid.rendered() << " of " << grid.values.size() << " cells rendered\n";
}
