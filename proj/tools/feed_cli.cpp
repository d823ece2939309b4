#include "feed/cli.hpp"

int main(int argc, char** argv)
{
    return feed::harness::cli_main(argc, argv);
}
