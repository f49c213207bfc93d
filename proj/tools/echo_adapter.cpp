// Reference adapter: speaks the line-delimited JSON protocol on stdio and
// returns a constant predictive distribution for every input. Failure
// injection flags exercise client-side protocol validation.

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <string>

using nlohmann::json;

int main(int argc, char** argv) {
    CLI::App app{"Constant-prediction reference adapter"};
    std::string family = "bernoulli";
    int num_samples = 1;
    double p = 0.5, mu = 0.0, sigma2 = 1.0;
    int version = 1;
    bool malformed = false, wrong_count = false;
    app.add_option("--family", family, "bernoulli or gaussian");
    app.add_option("--num-posterior-samples", num_samples, "Declared L");
    app.add_option("--p", p, "Constant bernoulli probability to emit");
    app.add_option("--mu", mu, "Constant gaussian mean to emit");
    app.add_option("--sigma2", sigma2, "Constant gaussian variance to emit");
    app.add_option("--version", version, "Protocol version to declare");
    app.add_flag("--malformed", malformed, "Reply to predict with a non-JSON line");
    app.add_flag("--wrong-count", wrong_count, "Drop one entry from each sample row");
    CLI11_PARSE(app, argc, argv);

    std::string line;
    while (std::getline(std::cin, line)) {
        const json msg = json::parse(line, nullptr, false);
        if (msg.is_discarded()) return 1;
        const std::string type = msg.value("type", "");
        if (type == "handshake") {
            json reply = {{"type", "handshake"},
                          {"version", version},
                          {"family", family},
                          {"num_posterior_samples", num_samples}};
            std::cout << reply.dump() << "\n" << std::flush;
        } else if (type == "predict") {
            if (malformed) {
                std::cout << "this is not json\n" << std::flush;
                continue;
            }
            const std::size_t n = msg.at("inputs").size();
            json params = json::array();
            for (int l = 0; l < num_samples; ++l) {
                json row = json::array();
                const std::size_t count = wrong_count && n > 0 ? n - 1 : n;
                for (std::size_t i = 0; i < count; ++i) {
                    if (family == "bernoulli")
                        row.push_back({{"p", p}});
                    else
                        row.push_back({{"mu", mu}, {"sigma2", sigma2}});
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
