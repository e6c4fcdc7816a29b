from deblur_gan.cli import main

main()
