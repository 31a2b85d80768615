from ntg.commands import evaluate, extract, gen_data, gradcheck, match, swap, synthesize, train

COMMANDS = (extract, match, swap, synthesize, train, evaluate, gen_data, gradcheck)
