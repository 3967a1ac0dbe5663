// Test double for an external detector worker. Speaks the NDJSON protocol
// and misbehaves on request, selected by argv[1]:
//   ok       correct worker (pattern decoder, max_batch 64)
//   small    advertises max_batch 8
//   nohello  starts with a result line
//   desync   echoes batch_id + 1
//   short    drops the last result
//   reorder  reverses the results
//   error    answers every request with an error message
//   crash    exits on the first request
//   silent   never answers

#include <algorithm>
#include <cstring>
#include <iostream>
#include <string>
#include <thread>

#include "traffic/detector.hpp"
#include "traffic/image.hpp"

using namespace traffic;

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "ok";
    std::ios::sync_with_stdio(false);

    if (mode == "nohello") {
        std::cout << wire::make_result({1, {}}) << std::endl;
    } else {
        std::cout << wire::make_hello({mode == "small" ? 8u : 64u, "fake-" + mode}) << std::endl;
    }

    std::string line;
    while (std::getline(std::cin, line)) {
        if (mode == "crash") return 3;
        if (mode == "silent") {
            std::this_thread::sleep_for(std::chrono::hours{1});
            continue;
        }
        wire::Request req;
        try {
            req = wire::parse_request(line);
        } catch (const BackendError& e) {
            std::cout << wire::make_error({-1, e.what()}) << std::endl;
            continue;
        }
        if (mode == "error") {
            std::cout << wire::make_error({req.batch_id, "model unavailable"}) << std::endl;
            continue;
        }
        wire::Result res{mode == "desync" ? req.batch_id + 1 : req.batch_id, {}};
        for (const auto& f : req.frames) {
            ClassCounts c;
            try {
                c = stub_detect(f);
            } catch (const InvalidImage&) {
            }
            res.results.push_back({f.source.str(), format_iso8601(f.captured_at), c});
        }
        if (mode == "short" && !res.results.empty()) res.results.pop_back();
        if (mode == "reorder") std::reverse(res.results.begin(), res.results.end());
        std::cout << wire::make_result(res) << std::endl;
    }
    return 0;
}
