// Adapter wrapping the built-in Bayesian models behind the wire protocol.
// Declares the family and posterior sample count from the model file and
// answers predict requests with the same code path used in-process, so a
// loopback session reproduces in-process predictions value-for-value.

#include "kllime/pipeline.hpp"

#include <json.hpp>

#include <iostream>
#include <string>

using nlohmann::json;

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: loopback_adapter <model.json> <seed>\n";
        return 2;
    }
    const kllime::BuiltinModel model = kllime::load_builtin_model(argv[1]);
    const std::uint64_t seed = std::stoull(argv[2]);

    std::string line;
    while (std::getline(std::cin, line)) {
        const json msg = json::parse(line, nullptr, false);
        if (msg.is_discarded()) return 1;
        const std::string type = msg.value("type", "");
        if (type == "handshake") {
            json reply = {{"type", "handshake"},
                          {"version", msg.value("version", 1)},
                          {"family", kllime::family_name(model.family)},
                          {"num_posterior_samples", model.num_posterior_samples}};
            std::cout << reply.dump() << "\n" << std::flush;
        } else if (type == "predict") {
            const auto& inputs = msg.at("inputs");
            const auto n = static_cast<Eigen::Index>(inputs.size());
            if (n == 0) return 1;
            const auto d = static_cast<Eigen::Index>(inputs.at(0).size());
            Eigen::MatrixXd Z(n, d);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto& row = inputs.at(static_cast<std::size_t>(i));
                for (Eigen::Index j = 0; j < d; ++j)
                    Z(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
            }
            const kllime::PredictionMatrix preds = model.predict(Z, seed);
            json params = json::array();
            for (Eigen::Index l = 0; l < preds.samples(); ++l) {
                json row = json::array();
                for (Eigen::Index i = 0; i < preds.points(); ++i) {
                    if (preds.family == kllime::Family::bernoulli)
                        row.push_back({{"p", preds.location(l, i)}});
                    else
                        row.push_back({{"mu", preds.location(l, i)},
                                       {"sigma2", preds.sigma2(l, i)}});
                }
                params.push_back(std::move(row));
            }
            json reply = {{"type", "predictions"}, {"params", std::move(params)}};
            std::cout << reply.dump() << "\n" << std::flush;
        } else if (type == "shutdown") {
            return 0;
        } else {
            return 1;
        }
    }
    return 0;
}
