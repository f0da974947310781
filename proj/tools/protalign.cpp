#include "protalign/commands.hpp"

int main(int argc, char** argv) {
    return protalign::cli::run(argc, argv);
}
